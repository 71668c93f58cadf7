"""CES 퀜치 실험: 전파, GS/CES 분류, 자발 주파수, 상도, 임계 지수, Floquet 전하"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from multiprocessing import Pool
from typing import Callable, Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy import signal, stats
from scipy.integrate import trapezoid
from scipy.optimize import minimize_scalar

from app.core.config import settings
from app.core.exceptions import (
    ConfigError,
    InconclusiveError,
    InsufficientRangeError,
    PeriodMismatchError,
)
from app.models.schemas import QuenchConfig
from app.services.spectral_service import (
    FieldState,
    Grid1D,
    PlaneWave,
    Potential,
    Sponge,
    Trajectory,
    apply_gp_hamiltonian,
    commensurate_length,
    delta_barrier,
    observables,
    sponge_profile,
)

logger = logging.getLogger(__name__)

Kind = Literal["GS", "CES", "INCONCLUSIVE"]


# ============== 퀜치 설정 ==============
@dataclass
class QuenchSetup:
    grid: Grid1D
    potential: Potential
    sponge: Sponge
    initial: FieldState


def quench_setup(cfg: QuenchConfig) -> QuenchSetup:
    """e^{ivx} 가 주기적인 상자, x=0 의 장벽, 기준 평면파로 이완하는 흡수층"""
    L = commensurate_length(cfg.v, cfg.L_min)
    grid = Grid1D.centered(L, cfg.N)
    potential = delta_barrier(grid, cfg.Z)
    sponge = Sponge(sponge_profile(grid, cfg.sponge_width, cfg.sponge_strength), reference=PlaneWave(1.0, cfg.v))
    initial = FieldState(np.exp(1j * cfg.v * grid.x), 0.0, grid)
    return QuenchSetup(grid, potential, sponge, initial)


# ============== 신호 분류 ==============
@dataclass(frozen=True)
class SignalClassification:
    kind: Kind
    amplitude: float
    omega: float
    peak_ratio: float
    periods_resolved: float

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega if self.omega > 0 else math.inf


def relative_amplitude(times: np.ndarray, density: np.ndarray, tail_fraction: float = 0.25) -> float:
    """마지막 tail_fraction 구간의 (max − min) / (2·평균)"""
    start = times[-1] - tail_fraction * (times[-1] - times[0])
    tail = density[times >= start]
    return float((tail.max() - tail.min()) / (2.0 * tail.mean()))


def dominant_frequency(times: np.ndarray, values: np.ndarray) -> Tuple[float, float]:
    """
    Hann 창 periodogram 의 최대 봉우리 각주파수와 봉우리/중앙값 비

    0 이 아닌 첫 봉우리를 포물선 보간으로 다듬는다.
    """
    dt = float(times[1] - times[0])
    nfft = 8 * (1 << int(math.ceil(math.log2(len(values)))))
    freqs, power = signal.periodogram(values - values.mean(), fs=1.0 / dt, window="hann", nfft=nfft, detrend=False)
    freqs, power = freqs[1:], power[1:]
    peak = int(np.argmax(power))
    floor = float(np.median(power))
    ratio = float(power[peak] / floor) if floor > 0 else math.inf
    offset = 0.0
    if 0 < peak < len(power) - 1:
        left, centre, right = power[peak - 1], power[peak], power[peak + 1]
        curvature = left - 2.0 * centre + right
        if curvature != 0.0:
            offset = 0.5 * (left - right) / curvature
    df = freqs[1] - freqs[0]
    return 2.0 * np.pi * (freqs[peak] + offset * df), ratio


def classify_signal(times: np.ndarray, density: np.ndarray, transient_cut: float) -> SignalClassification:
    """
    관측점 밀도 n(t) 로 GS / CES / 불확정 판정

    CES: 상대 진폭이 보호대 위 + 봉우리가 중앙값의 ces_peak_ratio 배 이상
    GS: 상대 진폭이 보호대 아래
    """
    times = np.asarray(times, dtype=float)
    density = np.asarray(density, dtype=float)
    amplitude = relative_amplitude(times, density)
    mask = times > transient_cut
    if np.count_nonzero(mask) < 8:
        raise ValueError(f"transient_cut={transient_cut} 이후 표본이 부족합니다")
    omega, ratio = dominant_frequency(times[mask], density[mask])
    span = times[mask][-1] - times[mask][0]
    periods = omega * span / (2.0 * np.pi)

    low, high = settings.ces_guard_band
    if amplitude < low:
        kind: Kind = "GS"
    elif amplitude > high and ratio >= settings.ces_peak_ratio:
        kind = "CES"
    else:
        kind = "INCONCLUSIVE"
    if kind == "GS":
        omega, periods = 0.0, 0.0
    return SignalClassification(kind, amplitude, float(omega), ratio, float(periods))


# ============== Gibbs 틀 (μ, T) ==============
def extract_mu(times: np.ndarray, phase: np.ndarray, period: float, n_periods: int = settings.ces_min_periods) -> float:
    """마지막 n_periods 주기 동안 풀린 위상 arg ψ(t) 의 선형 적합 (ψ ∝ e^{−iμt})"""
    times = np.asarray(times, dtype=float)
    window = times >= times[-1] - n_periods * period
    slope, _ = np.polyfit(times[window], np.asarray(phase)[window], 1)
    return float(-slope)


def refine_floquet(
    trajectory: Trajectory,
    period: float,
    mu: float,
    t0: float,
    window: Optional[np.ndarray] = None,
    search: float = 0.02,
) -> Tuple[float, float]:
    """
    한 주기 밀도 불일치를 최소화해 T 를, 겹침 위상으로 μ 를 다듬음

    μ 는 −arg⟨ψ(t0)|ψ(t0+T)⟩/T + 2πj/T 중 주어진 μ 에 가장 가까운 가지.
    """
    mask = np.ones(trajectory.grid.N, dtype=bool) if window is None else window
    start = trajectory.state_at(t0).psi[mask]
    n_start = np.abs(start) ** 2

    def mismatch(T: float) -> float:
        n_end = np.abs(trajectory.state_at(t0 + T).psi[mask]) ** 2
        return float(np.linalg.norm(n_end - n_start))

    result = minimize_scalar(
        mismatch,
        bounds=(period * (1.0 - search), period * (1.0 + search)),
        method="bounded",
        options={"xatol": 1e-6 * period},
    )
    T = float(result.x)
    overlap = np.vdot(start, trajectory.state_at(t0 + T).psi[mask])
    base = -np.angle(overlap) / T
    branch = np.round((mu - base) * T / (2.0 * np.pi))
    mu_refined = float(base + 2.0 * np.pi * branch / T)
    logger.debug(f"Floquet 보정: T {period:.6f} → {T:.6f}, μ {mu:.8f} → {mu_refined:.8f}")
    return T, mu_refined


# ============== 퀜치 실행 ==============
@dataclass
class QuenchOutcome:
    kind: Kind
    omega: float
    amplitude: float
    peak_ratio: float
    config: QuenchConfig
    t_max: float
    times: np.ndarray
    point_density: Dict[float, np.ndarray]
    obs_phase: np.ndarray
    trajectory: Trajectory
    mu: float = math.nan

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega if self.omega > 0 else math.inf

    @property
    def density(self) -> np.ndarray:
        """기본 관측점의 n(t)"""
        return self.point_density[self.config.obs_x]

    def summary(self) -> Dict[str, float]:
        return {
            "Z": self.config.Z, "v": self.config.v, "omega": self.omega,
            "amplitude": self.amplitude, "peak_ratio": self.peak_ratio, "t_max": self.t_max,
        }


class _PointRecorder:
    def __init__(self, grid: Grid1D, points: Sequence[float]):
        self.points = list(points)
        self.indices = np.array([grid.index_of(x) for x in self.points])
        self.times: List[float] = []
        self.values: List[np.ndarray] = []

    def __call__(self, t: float, psi: np.ndarray) -> None:
        self.times.append(t)
        self.values.append(psi[self.indices].copy())

    def series(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.array(self.times), np.array(self.values)


def _classify_recorded(recorder: _PointRecorder, cfg: QuenchConfig) -> SignalClassification:
    times, values = recorder.series()
    return classify_signal(times, np.abs(values[:, 0]) ** 2, cfg.transient_cut)


def run_quench(
    cfg: QuenchConfig,
    adaptive: bool = True,
    extra_points: Sequence[float] = (),
    refine: bool = True,
) -> QuenchOutcome:
    """
    e^{ivx} 에 델타 장벽을 켠 뒤 t_max 까지 전파하고 관측점 밀도로 분류

    adaptive 면 불확정이거나 분해된 주기가 ces_min_periods 미만일 때
    같은 궤적을 이어서 t_max 를 최대 ces_max_doublings 번 두 배로 늘린다.
    """
    setup = quench_setup(cfg)
    trajectory = Trajectory.start(
        setup.initial, setup.potential, cfg.dt, checkpoint_every=cfg.checkpoint_every, sponge=setup.sponge
    )
    recorder = _PointRecorder(setup.grid, [cfg.obs_x, *extra_points])
    recorder(0.0, setup.initial.psi)

    nsteps = int(round(cfg.t_max / cfg.dt))
    trajectory.extend(nsteps, cfg.sample_every, recorder)
    result = _classify_recorded(recorder, cfg)
    doublings = 0
    while adaptive and doublings < settings.ces_max_doublings and (
        result.kind == "INCONCLUSIVE" or (result.kind == "CES" and result.periods_resolved < settings.ces_min_periods)
    ):
        doublings += 1
        logger.info(f"분류 불안정 (Z={cfg.Z}, v={cfg.v}, {result.kind}): t_max → {trajectory.t_end * 2:.1f}")
        trajectory.extend(trajectory.steps, cfg.sample_every, recorder)
        result = _classify_recorded(recorder, cfg)

    times, values = recorder.series()
    outcome = QuenchOutcome(
        kind=result.kind,
        omega=result.omega,
        amplitude=result.amplitude,
        peak_ratio=result.peak_ratio,
        config=cfg,
        t_max=trajectory.t_end,
        times=times,
        point_density={x: np.abs(values[:, i]) ** 2 for i, x in enumerate(recorder.points)},
        obs_phase=np.unwrap(np.angle(values[:, 0])),
        trajectory=trajectory,
    )
    if result.kind == "INCONCLUSIVE":
        logger.warning(f"분류 불확정 (Z={cfg.Z}, v={cfg.v}): 진폭={result.amplitude:.2e}, 봉우리 비={result.peak_ratio:.1f}")
        raise InconclusiveError(
            f"(Z={cfg.Z}, v={cfg.v}) 분류 불확정: 진폭 {result.amplitude:.2e}, 봉우리 비 {result.peak_ratio:.1f}",
            outcome=outcome,
        )
    if result.kind == "CES":
        outcome.mu = extract_mu(times, outcome.obs_phase, result.period)
        if refine:
            window = setup.grid.window_mask(settings.observation_half_width)
            t0 = aligned_time(trajectory, trajectory.t_end - 2.0 * result.period)
            period, outcome.mu = refine_floquet(trajectory, result.period, outcome.mu, t0, window)
            outcome.omega = 2.0 * np.pi / period
    else:
        outcome.mu = extract_mu(times, outcome.obs_phase, cfg.t_max - cfg.transient_cut, n_periods=1)
    logger.info(
        f"퀜치 완료 (Z={cfg.Z}, v={cfg.v}): {outcome.kind}, ω={outcome.omega:.6f}, T={outcome.period:.4f}, "
        f"진폭={outcome.amplitude:.2e}, μ={outcome.mu:.8f}"
    )
    return outcome


def aligned_time(trajectory: Trajectory, t: float) -> float:
    """t 이하의 가장 가까운 단계 경계"""
    step = max(0, int(math.floor((t - trajectory.t0) / trajectory.dt)))
    return trajectory.time_of(step)


def point_frequencies(outcome: QuenchOutcome) -> Dict[float, float]:
    """기록된 각 관측점에서 따로 추출한 ω"""
    mask = outcome.times > outcome.config.transient_cut
    return {
        x: dominant_frequency(outcome.times[mask], density[mask])[0]
        for x, density in outcome.point_density.items()
    }


# ============== Floquet 전하 ==============
@dataclass(frozen=True)
class FloquetCharge:
    F: float
    I: float
    E: float
    N: float
    energy_drift: float


def floquet_charge(
    trajectory: Trajectory,
    omega: float,
    mu: float,
    t0: float,
    window: Optional[float] = None,
    stride: int = 1,
) -> FloquetCharge:
    """
    F = (1/T)∫dt∫dx Re[ψ_G* i∂ₜψ_G] / ω, I = E − ωF  (ψ_G = e^{iμt}ψ)

    i∂ₜψ 는 운동 방정식 H_GP ψ 로 평가한다. window 는 적분 구간 길이 (기본 T).
    """
    period = 2.0 * np.pi / omega
    length = period if window is None else window
    if abs(length - period) > settings.period_mismatch_tol * period:
        raise PeriodMismatchError(f"적분 구간 {length:.4f} 가 주기 T={period:.4f} 와 1% 이상 다릅니다")

    series = trajectory.sample(t0, t0 + length, stride)
    times = list(series.times)
    frames = list(series.psi)
    if t0 + length - times[-1] > 1e-9 * length:
        times.append(t0 + length)
        frames.append(trajectory.state_at(t0 + length).psi)

    V = trajectory.potential
    grid = trajectory.grid
    charge_density, energies, numbers = [], [], []
    for t, psi in zip(times, frames):
        h_psi = apply_gp_hamiltonian(psi, V)
        charge_density.append(float(np.real(np.vdot(psi, h_psi - mu * psi)) * grid.dx))
        N, _, E = observables(FieldState(psi, t, grid), V)
        energies.append(E)
        numbers.append(N)

    times = np.array(times)
    span = times[-1] - times[0]
    F = trapezoid(charge_density, times) / (span * omega)
    E_mean = trapezoid(energies, times) / span
    N_mean = trapezoid(numbers, times) / span
    drift = abs(energies[-1] - energies[0]) / abs(E_mean)
    if drift > settings.energy_drift_tol:
        logger.warning(f"한 주기 에너지 변화가 큽니다: {drift:.2e} > {settings.energy_drift_tol:.0e}")
    result = FloquetCharge(F=float(F), I=float(E_mean - omega * F), E=float(E_mean), N=float(N_mean), energy_drift=drift)
    logger.info(f"Floquet 전하: F={result.F:.8f}, I={result.I:.8f}, E={result.E:.8f}")
    return result


# ============== 상도 ==============
@dataclass(frozen=True)
class CellResult:
    Z: float
    v: float
    kind: Kind
    omega: float
    amplitude: float

    def as_row(self) -> Dict[str, object]:
        return {"Z": self.Z, "v": self.v, "kind": self.kind, "omega": self.omega, "amplitude": self.amplitude}


def run_cell(cfg: QuenchConfig) -> CellResult:
    """칸 하나 (불확정은 예외 대신 INCONCLUSIVE 로 표시)"""
    try:
        outcome = run_quench(cfg, refine=False)
    except InconclusiveError as e:
        outcome = e.outcome
        return CellResult(cfg.Z, cfg.v, "INCONCLUSIVE", outcome.omega, outcome.amplitude)
    return CellResult(cfg.Z, cfg.v, outcome.kind, outcome.omega, outcome.amplitude)


def _map_cells(configs: Sequence[QuenchConfig], workers: Optional[int] = None) -> Iterable[CellResult]:
    """작업 순서대로 결과를 돌려주는 프로세스 풀 (workers ≤ 1 이면 직렬)"""
    workers = min(settings.max_workers if workers is None else workers, len(configs))
    if workers <= 1:
        for cfg in configs:
            yield run_cell(cfg)
        return
    with Pool(workers) as pool:
        for result in pool.imap(run_cell, configs):
            yield result


@dataclass
class PhaseDiagram:
    cells: Dict[Tuple[float, float], CellResult] = field(default_factory=dict)
    v_boundary: Dict[float, float] = field(default_factory=dict)
    Z_boundary: Dict[float, float] = field(default_factory=dict)

    def rows(self) -> List[Dict[str, object]]:
        return [self.cells[key].as_row() for key in sorted(self.cells)]

    @property
    def inconclusive(self) -> List[Tuple[float, float]]:
        return [key for key, cell in sorted(self.cells.items()) if cell.kind == "INCONCLUSIVE"]


def scan_phase_diagram(
    Z_values: Sequence[float],
    v_values: Sequence[float],
    template: QuenchConfig,
    done: Optional[Dict[Tuple[float, float], CellResult]] = None,
    on_cell: Optional[Callable[[CellResult], None]] = None,
    bisect: bool = False,
    workers: Optional[int] = None,
) -> PhaseDiagram:
    """
    (Z, v) 격자의 모든 칸을 분류

    done 에 있는 칸은 다시 계산하지 않는다. on_cell 은 부모 프로세스에서
    작업 순서대로 호출된다. bisect 면 각 행/열의 GS→CES 전이를 이분법으로 찾는다.
    """
    if any(v <= 0 or v >= 1 for v in v_values):
        raise ConfigError("v 는 (0, 1) 범위여야 합니다", key="v")
    diagram = PhaseDiagram(cells=dict(done or {}))
    pending = [
        template.model_copy(update={"Z": Z, "v": v})
        for Z in Z_values for v in v_values if (Z, v) not in diagram.cells
    ]
    logger.info(f"상도 탐색: {len(Z_values)}×{len(v_values)} 칸 중 {len(pending)} 칸 실행")
    for cell in _map_cells(pending, workers):
        diagram.cells[(cell.Z, cell.v)] = cell
        if on_cell is not None:
            on_cell(cell)

    if diagram.inconclusive:
        logger.warning(f"불확정 칸 {len(diagram.inconclusive)}개는 경계 탐색에서 제외됩니다")
    if bisect:
        for Z in Z_values:
            bracket = _transition_bracket([(v, diagram.cells[(Z, v)].kind) for v in v_values])
            if bracket is not None:
                diagram.v_boundary[Z] = locate_boundary("v", Z, bracket[0], bracket[1], template)
        for v in v_values:
            bracket = _transition_bracket([(Z, diagram.cells[(Z, v)].kind) for Z in Z_values])
            if bracket is not None:
                diagram.Z_boundary[v] = locate_boundary("Z", v, bracket[0], bracket[1], template)
        for name, boundary in (("v_c(Z)", diagram.v_boundary), ("Z_c(v)", diagram.Z_boundary)):
            if len(boundary) > 1 and not boundary_monotonicity(boundary):
                logger.warning(f"{name} 경계가 단조롭지 않습니다: {boundary}")
    return diagram


def _transition_bracket(line: Sequence[Tuple[float, Kind]]) -> Optional[Tuple[float, float]]:
    """불확정 칸을 건너뛰고 마지막 GS 와 그 다음 CES"""
    last_gs = None
    for value, kind in line:
        if kind == "GS":
            last_gs = value
        elif kind == "CES" and last_gs is not None:
            return last_gs, value
    return None


def boundary_monotonicity(boundary: Dict[float, float]) -> bool:
    """경계 곡선이 단조 (증가 또는 감소) 인지"""
    values = np.array([boundary[key] for key in sorted(boundary)])
    steps = np.diff(values)
    return bool(np.all(steps <= 0) or np.all(steps >= 0))


def _with_axis(template: QuenchConfig, axis: str, fixed: float, value: float) -> QuenchConfig:
    if axis == "v":
        return template.model_copy(update={"Z": fixed, "v": value})
    if axis == "Z":
        return template.model_copy(update={"Z": value, "v": fixed})
    raise ValueError(f"axis 는 'v' 또는 'Z' 여야 합니다: {axis}")


def _boundary_side(cfg: QuenchConfig) -> Kind:
    cell = run_cell(cfg)
    if cell.kind != "INCONCLUSIVE":
        return cell.kind
    resolved: Kind = "CES" if cell.amplitude > settings.ces_threshold else "GS"
    logger.warning(f"이분점 (Z={cfg.Z}, v={cfg.v}) 불확정: 기준 임계값으로 {resolved} 처리")
    return resolved


def locate_boundary(
    axis: str,
    fixed: float,
    lo: float,
    hi: float,
    template: QuenchConfig,
    resolution: float = settings.boundary_resolution,
) -> float:
    """
    lo (GS) 와 hi (CES) 사이의 전이를 이분법으로 resolution 까지 좁힘

    v 축: Z=fixed 에서 v_c, Z 축: v=fixed 에서 Z_c. 반환값은 최종 구간의 중점.
    """
    if hi <= lo:
        raise ValueError(f"구간이 잘못되었습니다: lo={lo}, hi={hi}")
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if _boundary_side(_with_axis(template, axis, fixed, mid)) == "CES":
            hi = mid
        else:
            lo = mid
    critical = 0.5 * (lo + hi)
    logger.info(f"경계 ({axis} 축, 고정값 {fixed}): {critical:.4f}")
    return critical


def critical_samples(
    axis: str,
    fixed: float,
    critical: float,
    deltas: Sequence[float],
    template: QuenchConfig,
    workers: Optional[int] = None,
) -> List[Tuple[float, float]]:
    """CES 쪽 거리 δ 에서의 (δ, ω); CES 가 아닌 점은 버림"""
    configs = [_with_axis(template, axis, fixed, critical + delta) for delta in deltas]
    samples = []
    for delta, cell in zip(deltas, _map_cells(configs, workers)):
        if cell.kind == "CES" and cell.omega > 0:
            samples.append((float(delta), cell.omega))
        else:
            logger.warning(f"δ={delta} 에서 CES 가 아니라 표본에서 제외: {cell.kind}")
    return samples


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    prefactor: float
    stderr: float
    r_squared: float
    n_samples: int
    decades: float


def fit_critical_exponent(samples: Sequence[Tuple[float, float]]) -> ExponentFit:
    """log ω = log A + β log δ 최소제곱 적합"""
    delta = np.array([s[0] for s in samples], dtype=float)
    omega = np.array([s[1] for s in samples], dtype=float)
    if np.any(delta <= 0) or np.any(omega <= 0):
        raise ValueError("δ 와 ω 는 양수여야 합니다")
    decades = float(np.log10(delta.max() / delta.min())) if len(delta) else 0.0
    if len(delta) < settings.exponent_min_samples or decades < settings.exponent_min_decades:
        raise InsufficientRangeError(
            f"표본 {len(delta)}개, δ 범위 {decades:.2f} decade: "
            f"최소 {settings.exponent_min_samples}개, {settings.exponent_min_decades} decade 필요"
        )
    fit = stats.linregress(np.log(delta), np.log(omega))
    result = ExponentFit(
        exponent=float(fit.slope),
        prefactor=float(np.exp(fit.intercept)),
        stderr=float(fit.stderr),
        r_squared=float(fit.rvalue ** 2),
        n_samples=len(delta),
        decades=decades,
    )
    logger.info(f"임계 지수: {result.exponent:.4f} ± {result.stderr:.4f} (R²={result.r_squared:.5f})")
    return result


def default_deltas(delta_min: float, delta_max: float, n_samples: int) -> List[float]:
    return list(np.geomspace(delta_min, delta_max, n_samples))
