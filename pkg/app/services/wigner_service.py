"""Truncated Wigner 앙상블: Bogoliubov 진공 표본, 밀도-밀도 상관, 시간 FNG 계수-1 검증"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from multiprocessing import Pool
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import ConfigError, EnsembleError, NumericalBlowupError, WindowTooShortError
from app.models.schemas import EnsembleConfig
from app.services.ces_service import QuenchSetup, quench_setup
from app.services.spectral_service import FieldState, Grid1D, SplitStepper

logger = logging.getLogger(__name__)


# ============== 진공 잡음 ==============
def bogoliubov_amplitudes(k: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """균질 응축체 (gn₀=1) 의 (u_k, v_k, ε_k), u² − v² = 1"""
    ek = 0.5 * np.asarray(k, dtype=float) ** 2
    eps = np.sqrt(ek * (ek + 2.0))
    ratio = (ek + 1.0) / (2.0 * eps)
    return np.sqrt(ratio + 0.5), -np.sqrt(ratio - 0.5), eps


def sampled_modes(grid: Grid1D, k_cut: Optional[float] = None) -> np.ndarray:
    """0 < |k| ≤ k_cut 인 모드 (Nyquist 제외); 기본 k_cut = π/(2dx)"""
    nyquist = np.pi / grid.dx
    k_cut = 0.5 * nyquist if k_cut is None else k_cut
    if k_cut > nyquist * (1.0 + 1e-12):
        raise ConfigError(f"k_cut={k_cut} 가 격자 Nyquist π/dx={nyquist} 를 넘습니다", key="k_cut")
    index = np.arange(grid.N)
    return (np.abs(grid.k) > 0) & (np.abs(grid.k) <= k_cut * (1.0 + 1e-12)) & (index != grid.N // 2)


def vacuum_density_variance(grid: Grid1D, k_cut: Optional[float] = None, n0_xi: float = settings.tw_n0_xi) -> float:
    """표본 모드에 대한 선형 차수 Var δn = Σ_k S(k) / (L n₀), S = E_k/ε_k"""
    k = grid.k[sampled_modes(grid, k_cut)]
    ek = 0.5 * k ** 2
    return float(np.sum(ek / np.sqrt(ek * (ek + 2.0))) / (grid.L * n0_xi))


def ordering_offset(grid: Grid1D, k_cut: Optional[float] = None, n0_xi: float = settings.tw_n0_xi) -> float:
    """대칭 순서 밀도의 진공 기여 M/(2L n₀)"""
    return float(np.count_nonzero(sampled_modes(grid, k_cut)) / (2.0 * grid.L * n0_xi))


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """(seed, 궤적 번호) 로 정해지는 독립 난수열"""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def sample_trajectory(cfg: EnsembleConfig, grid: Grid1D, index: int) -> FieldState:
    """궤적 index 의 초기 상태"""
    rng = trajectory_rng(cfg.seed, index)
    plane = np.exp(1j * cfg.base.v * grid.x)
    if cfg.noise_kind == "classical_number":
        delta_n = rng.normal(0.0, cfg.classical_sigma)
        return FieldState(np.sqrt(1.0 + delta_n) * plane, 0.0, grid)

    mask = sampled_modes(grid, cfg.k_cut)
    u, v, _ = bogoliubov_amplitudes(np.where(mask, grid.k, 1.0))
    alpha = np.zeros(grid.N, dtype=complex)
    alpha[mask] = (rng.standard_normal(np.count_nonzero(mask)) + 1j * rng.standard_normal(np.count_nonzero(mask))) / 2.0
    # e^{−ikx} 항은 −k 모드의 계수로 모음
    reflected = np.conj(alpha[(-np.arange(grid.N)) % grid.N])
    coefficients = np.where(mask, alpha * u + reflected * v, 0.0)
    noise = grid.N * np.fft.ifft(coefficients * np.exp(1j * grid.k * grid.x_min))
    return FieldState(plane * (1.0 + noise / np.sqrt(grid.L * cfg.n0_xi)), 0.0, grid)


def sample_initial(cfg: EnsembleConfig, indices: Optional[Sequence[int]] = None) -> List[FieldState]:
    """궤적별 초기 상태 목록"""
    grid = quench_setup(cfg.base).grid
    sampled_modes(grid, cfg.k_cut)
    indices = range(cfg.n_traj) if indices is None else indices
    return [sample_trajectory(cfg, grid, i) for i in indices]


# ============== 누적 통계 ==============
@dataclass
class RunningStats:
    """평균과 공분산 곱 모멘트 (Welford / Chan 병합)"""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def from_sample(cls, sample: np.ndarray) -> "RunningStats":
        sample = np.asarray(sample, dtype=float)
        return cls(1, sample.copy(), np.zeros(sample.shape + sample.shape[-1:]))

    def merge(self, other: "RunningStats") -> "RunningStats":
        if self.count == 0:
            return other
        total = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / total)
        m2 = self.m2 + other.m2 + np.einsum("...i,...j->...ij", delta, delta) * (self.count * other.count / total)
        return RunningStats(total, mean, m2)

    @property
    def covariance(self) -> np.ndarray:
        if self.count < 2:
            raise ValueError("공분산에는 표본이 2개 이상 필요합니다")
        return self.m2 / (self.count - 1)


def merge_stats(parts: Iterable[RunningStats]) -> RunningStats:
    """순서대로 쌍별 병합"""
    merged: Optional[RunningStats] = None
    for part in parts:
        merged = part if merged is None else merged.merge(part)
    if merged is None:
        raise ValueError("병합할 통계가 없습니다")
    return merged


@dataclass
class EnsembleStats:
    times: np.ndarray
    x: np.ndarray
    mean_density: np.ndarray
    G: np.ndarray
    n_used: int
    n_dropped: int
    halves: Tuple[RunningStats, RunningStats]
    n0_xi: float

    def trace_antidiagonal(self) -> Tuple[np.ndarray, np.ndarray]:
        """x > 0 인 부분격자 점의 G(x, −x, t): (x 값, (시각, 점) 배열)"""
        size = len(self.x)
        upper = np.arange(size // 2 + 1, size)
        return self.x[upper], self.G[:, upper, size - 1 - upper]


# ============== 앙상블 실행 ==============
@dataclass(frozen=True)
class OutputPlan:
    every_steps: int
    first_step: int
    last_step: int
    subgrid: np.ndarray

    def steps(self) -> np.ndarray:
        return np.arange(self.first_step, self.last_step + 1, self.every_steps)


def output_plan(cfg: EnsembleConfig, grid: Grid1D) -> OutputPlan:
    """transient_cut 이후 output_every 간격, |x| ≤ window 의 stride 부분격자"""
    dt = cfg.base.dt
    every = max(1, int(round(cfg.output_every / dt)))
    first = max(1, int(np.ceil(cfg.base.transient_cut / dt / every - 1e-9))) * every
    last = int(round(cfg.base.t_max / dt))
    if first > last:
        raise ValueError("transient_cut 이후 출력 시각이 없습니다")
    half = int(np.floor(cfg.window / (grid.dx * cfg.subgrid_stride) + 1e-9))
    half = min(half, (grid.N // 2 - 1) // cfg.subgrid_stride)
    offsets = np.arange(-half, half + 1) * cfg.subgrid_stride
    subgrid = (grid.index_of(0.0) + offsets) % grid.N
    return OutputPlan(every, first, last, subgrid)


def _propagate_density(setup: QuenchSetup, plan: OutputPlan, psi: np.ndarray, dt: float) -> np.ndarray:
    stepper = SplitStepper(setup.grid, setup.potential, dt, sponge=setup.sponge)
    samples: List[np.ndarray] = []

    def observe(i: int, current: np.ndarray) -> None:
        if i >= plan.first_step and (i - plan.first_step) % plan.every_steps == 0:
            samples.append(np.abs(current[plan.subgrid]) ** 2)

    stepper.run(psi, 0.0, plan.last_step, observe)
    return np.array(samples)


def run_trajectory(job: Tuple[EnsembleConfig, int]) -> Tuple[int, Optional[np.ndarray]]:
    """궤적 하나의 부분격자 밀도 (발산하면 None)"""
    cfg, index = job
    setup = quench_setup(cfg.base)
    plan = output_plan(cfg, setup.grid)
    state = sample_trajectory(cfg, setup.grid, index)
    try:
        return index, _propagate_density(setup, plan, state.psi, cfg.base.dt)
    except NumericalBlowupError as e:
        logger.warning(f"궤적 {index} 발산으로 제외: {e}")
        return index, None


def _map_trajectories(cfg: EnsembleConfig, workers: Optional[int]) -> Iterable[Tuple[int, Optional[np.ndarray]]]:
    jobs = [(cfg, i) for i in range(cfg.n_traj)]
    workers = min(settings.max_workers if workers is None else workers, len(jobs))
    if workers <= 1:
        for job in jobs:
            yield run_trajectory(job)
        return
    with Pool(workers) as pool:
        for result in pool.imap(run_trajectory, jobs):
            yield result


def run_ensemble(cfg: EnsembleConfig, workers: Optional[int] = None) -> EnsembleStats:
    """
    n_traj 개 궤적을 같은 퀜치 프로토콜로 전파하고 n(x,t), G(x,x′,t) 를 누적

    궤적 번호 순으로 짝/홀 반쪽 앙상블에 병합한 뒤 두 반쪽을 합친다.
    G 는 n₀ξ₀⁻¹ 단위 (n0_xi 를 곱함).
    """
    setup = quench_setup(cfg.base)
    sampled_modes(setup.grid, cfg.k_cut)
    plan = output_plan(cfg, setup.grid)
    halves: List[Optional[RunningStats]] = [None, None]
    dropped = 0
    for index, density in _map_trajectories(cfg, workers):
        if density is None or not np.all(np.isfinite(density)):
            dropped += 1
            continue
        part = RunningStats.from_sample(density)
        slot = index % 2
        halves[slot] = part if halves[slot] is None else halves[slot].merge(part)

    limit = settings.tw_max_drop_frac * cfg.n_traj
    if dropped > limit:
        raise EnsembleError(f"버려진 궤적 {dropped}/{cfg.n_traj} 가 허용치 {limit:.1f} 를 넘습니다")
    if halves[0] is None or halves[1] is None:
        raise EnsembleError("두 반쪽 앙상블 모두에 유효한 궤적이 있어야 합니다")
    merged = halves[0].merge(halves[1])

    offset = ordering_offset(setup.grid, cfg.k_cut, cfg.n0_xi) if cfg.noise_kind == "quantum" else 0.0
    stats = EnsembleStats(
        times=plan.steps() * cfg.base.dt,
        x=setup.grid.x[plan.subgrid],
        mean_density=merged.mean - offset,
        G=merged.covariance * cfg.n0_xi,
        n_used=merged.count,
        n_dropped=dropped,
        halves=(halves[0], halves[1]),
        n0_xi=cfg.n0_xi,
    )
    logger.info(f"앙상블 완료: 궤적 {stats.n_used}개 (제외 {dropped}), 출력 시각 {len(stats.times)}개")
    return stats


def split_half_error(stats: EnsembleStats) -> np.ndarray:
    """두 반쪽 앙상블 G 차이로 본 전체 G 의 몬테카를로 오차 (시각별 Frobenius)"""
    g_even = stats.halves[0].covariance * stats.n0_xi
    g_odd = stats.halves[1].covariance * stats.n0_xi
    return 0.5 * np.linalg.norm(g_even - g_odd, axis=(-2, -1))


def background_density(cfg: EnsembleConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """잡음 없는 평균장 궤적의 (times, n₀, ∂ₜn₀). 출력 시각과 부분격자 위에서 ∂ₜ 는 중심 차분"""
    setup = quench_setup(cfg.base)
    plan = output_plan(cfg, setup.grid)
    dt = cfg.base.dt
    wanted = set()
    for step in plan.steps():
        wanted.update((step - 1, step, step + 1))
    stepper = SplitStepper(setup.grid, setup.potential, dt, sponge=setup.sponge)
    recorded = {}
    if 0 in wanted:
        recorded[0] = np.abs(setup.initial.psi[plan.subgrid]) ** 2

    def observe(i: int, psi: np.ndarray) -> None:
        if i in wanted:
            recorded[i] = np.abs(psi[plan.subgrid]) ** 2

    stepper.run(setup.initial.psi.copy(), 0.0, plan.last_step + 1, observe)
    steps = [s for s in plan.steps() if s - 1 in recorded]
    density = np.array([recorded[s] for s in steps])
    rate = np.array([(recorded[s + 1] - recorded[s - 1]) / (2.0 * dt) for s in steps])
    return np.array(steps) * dt, density, rate


# ============== 계수-1 적합 ==============
@dataclass(frozen=True)
class EnvelopeFit:
    a: float
    b: float
    c: float
    r_squared: float
    times: np.ndarray
    maxima: np.ndarray


def envelope_maxima(times: np.ndarray, trace: np.ndarray, period: float) -> Tuple[np.ndarray, np.ndarray]:
    """연속한 주기 창마다 |trace| 의 최댓값 (NaN 제외)"""
    times = np.asarray(times, dtype=float)
    trace = np.abs(np.asarray(trace, dtype=float))
    n_windows = int(np.floor((times[-1] - times[0]) / period + 1e-9))
    if n_windows < settings.fng_min_periods:
        raise WindowTooShortError(
            f"적합 구간에 주기가 {n_windows}개뿐입니다 (최소 {settings.fng_min_periods}개)"
        )
    peak_times, peaks = [], []
    for w in range(n_windows):
        start = times[0] + w * period
        inside = (times >= start) & (times < start + period) & np.isfinite(trace)
        if not np.any(inside):
            continue
        local = np.flatnonzero(inside)[np.argmax(trace[inside])]
        peak_times.append(times[local])
        peaks.append(trace[local])
    return np.array(peak_times), np.array(peaks)


def fit_envelope(times: np.ndarray, trace: np.ndarray, period: float) -> EnvelopeFit:
    """진동 최댓값 포락선에 A(t) = at² + bt + c 적합"""
    peak_times, peaks = envelope_maxima(times, trace, period)
    coefficients = np.polyfit(peak_times, peaks, 2)
    predicted = np.polyval(coefficients, peak_times)
    total = np.sum((peaks - peaks.mean()) ** 2)
    r_squared = 1.0 - np.sum((peaks - predicted) ** 2) / total if total > 0 else 1.0
    a, b, c = (float(x) for x in coefficients)
    return EnvelopeFit(a, b, c, float(r_squared), peak_times, peaks)


def rank_one_amplitude(G: np.ndarray, r: np.ndarray, min_weight: float = 0.1) -> np.ndarray:
    """
    G(t) ≈ A(t) r rᵀ 의 최소제곱 A = rᵀGr / ‖r‖⁴

    ‖r‖² 가 최댓값의 min_weight 배 미만인 시각은 NaN.
    """
    weight = np.einsum("ti,ti->t", r, r)
    amplitude = np.einsum("ti,tij,tj->t", r, G, r) / np.where(weight > 0, weight, 1.0) ** 2
    amplitude[weight < min_weight * weight.max()] = np.nan
    return amplitude


def rank_one_residual(G: np.ndarray, r: np.ndarray, amplitude: float) -> float:
    """‖G − A r rᵀ‖ / ‖G‖"""
    return float(np.linalg.norm(G - amplitude * np.outer(r, r)) / np.linalg.norm(G))


@dataclass(frozen=True)
class FngFit:
    envelope: EnvelopeFit
    amplitude: np.ndarray
    rank_one_residual: float

    @property
    def coefficients(self) -> Tuple[float, float, float]:
        return self.envelope.a, self.envelope.b, self.envelope.c


def fit_rank_one(times: np.ndarray, G: np.ndarray, r_t: np.ndarray, period: float) -> FngFit:
    """G ≈ A(t) r_t r_tᵀ 의 A(t) 와 그 포락선의 이차 적합"""
    amplitude = rank_one_amplitude(G, r_t)
    envelope = fit_envelope(times, amplitude, period)
    finite = np.flatnonzero(np.isfinite(amplitude))
    last = int(finite[-1])
    residual = rank_one_residual(G[last], r_t[last], amplitude[last])
    logger.info(
        f"계수-1 적합: a={envelope.a:.4e}, b={envelope.b:.4e}, c={envelope.c:.4e}, "
        f"R²={envelope.r_squared:.4f}, 잔차={residual:.3f}"
    )
    return FngFit(envelope, amplitude, residual)


def fit_fng(stats: EnsembleStats, background_rate: np.ndarray, period: float) -> FngFit:
    """앙상블 G 와 평균장 r_t = ∂ₜn₀ (같은 출력 시각, 같은 부분격자)"""
    if background_rate.shape != stats.mean_density.shape:
        raise ValueError("배경 ∂ₜn₀ 의 모양이 앙상블 출력과 다릅니다")
    return fit_rank_one(stats.times, stats.G, background_rate, period)


def rank_one_dominance(stats: EnsembleStats) -> np.ndarray:
    """출력 시각별 σ₁/σ₂"""
    singular = np.linalg.svd(stats.G, compute_uv=False)
    return singular[:, 0] / np.where(singular[:, 1] > 0, singular[:, 1], np.finfo(float).tiny)


def correlation_similarity(G1: np.ndarray, G2: np.ndarray) -> float:
    """두 상관 행렬의 코사인 유사도"""
    return float(np.sum(G1 * G2) / (np.linalg.norm(G1) * np.linalg.norm(G2)))
