"""주기 격자, 스펙트럴 미분, 분할 단계(Strang) GP 전파, 허수 시간 이완"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import NoConvergence, newton_krylov
from scipy.sparse.linalg import LinearOperator

from app.core.config import settings
from app.core.exceptions import GridMismatchError, MaxIterationsError, NumericalBlowupError

logger = logging.getLogger(__name__)

Frame = Tuple[float, float]
LAB_FRAME: Frame = (0.0, 0.0)


# ============== 격자와 필드 ==============
@dataclass(frozen=True)
class Grid1D:
    """균일 주기 격자 (x_min 부터 길이 L, N 점)"""

    L: float
    N: int
    x_min: float = 0.0

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError(f"격자 길이 L 은 양수여야 합니다: {self.L}")
        if self.N < 2 or self.N % 2:
            raise ValueError(f"격자 점 수 N 은 짝수여야 합니다: {self.N}")

    @classmethod
    def centered(cls, L: float, N: int) -> "Grid1D":
        """x=0 이 격자점이고 [−L/2, L/2) 를 덮는 격자"""
        return cls(L=L, N=N, x_min=-0.5 * L)

    @property
    def dx(self) -> float:
        return self.L / self.N

    @cached_property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.N)

    @cached_property
    def k(self) -> np.ndarray:
        # (2π/L)·[0, 1, …, N/2, −N/2+1, …, −1]
        index = np.fft.fftfreq(self.N, d=1.0 / self.N)
        index[self.N // 2] = self.N // 2
        return (2.0 * np.pi / self.L) * index

    def same_as(self, other: "Grid1D") -> bool:
        return self.N == other.N and math.isclose(self.L, other.L) and math.isclose(self.x_min, other.x_min, abs_tol=1e-12)

    def index_of(self, x: float) -> int:
        """x 에 가장 가까운 격자점 (주기 경계 고려)"""
        return int(np.round((x - self.x_min) / self.dx)) % self.N

    def window_mask(self, half_width: float, center: float = 0.0) -> np.ndarray:
        return np.abs(self.x - center) <= half_width + 1e-12


def check_same_grid(a: Grid1D, b: Grid1D) -> None:
    if not a.same_as(b):
        raise GridMismatchError(f"서로 다른 격자입니다: {a} vs {b}")


@dataclass
class FieldState:
    """격자 위 응축체 파동함수와 시간"""

    psi: np.ndarray
    t: float
    grid: Grid1D

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != (self.grid.N,):
            raise GridMismatchError(f"ψ 길이 {self.psi.shape} 가 격자 N={self.grid.N} 과 다릅니다")

    def copy(self) -> "FieldState":
        return FieldState(self.psi.copy(), self.t, self.grid)


@dataclass
class Potential:
    """외부 퍼텐셜 (허수부 ≤ 0 은 흡수)"""

    values: np.ndarray
    grid: Grid1D

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.grid.N,):
            raise GridMismatchError("퍼텐셜 길이가 격자와 다릅니다")
        if np.iscomplexobj(self.values) and np.any(self.values.imag > 0):
            raise ValueError("흡수 퍼텐셜의 허수부는 0 이하여야 합니다")

    @classmethod
    def zero(cls, grid: Grid1D) -> "Potential":
        return cls(np.zeros(grid.N), grid)

    @property
    def real(self) -> np.ndarray:
        return np.real(self.values)

    @property
    def absorbing(self) -> np.ndarray:
        return np.imag(self.values) if np.iscomplexobj(self.values) else np.zeros(self.grid.N)

    @property
    def is_absorbing(self) -> bool:
        return bool(np.any(self.absorbing < 0))

    def __add__(self, other: "Potential") -> "Potential":
        check_same_grid(self.grid, other.grid)
        return Potential(self.values + other.values, self.grid)


@dataclass(frozen=True)
class PlaneWave:
    """ψ = A e^{i(kx − ωt)}, ω = k²/2 + A² (V=0 GP 해)"""

    amplitude: float
    k: float

    @property
    def omega(self) -> float:
        return 0.5 * self.k ** 2 + self.amplitude ** 2

    def at(self, x: np.ndarray, t: float, frame: Frame = LAB_FRAME) -> np.ndarray:
        mu, v = frame
        omega = self.omega - self.k * v - mu
        return self.amplitude * np.exp(1j * (self.k * x - omega * t))


@dataclass
class Sponge:
    """sin² 램프 감쇠층; reference 가 있으면 ψ 를 기준 평면파로 이완"""

    gamma: np.ndarray
    reference: Optional[PlaneWave] = None


@dataclass
class FieldSeries:
    """일정 간격 시점의 필드 묶음"""

    times: np.ndarray
    psi: np.ndarray
    grid: Grid1D
    potential: Potential

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


# ============== 퍼텐셜 구성 ==============
def _periodic_distance(grid: Grid1D, x0: float) -> np.ndarray:
    d = grid.x - x0
    return d - grid.L * np.round(d / grid.L)


def delta_barrier(grid: Grid1D, Z: float, x0: float = 0.0, sigma: Optional[float] = None) -> Potential:
    """V = −Zδ(x−x0) 의 가우시안 정칙화 (σ = 2dx, ∫V = −Z)"""
    sigma = 2.0 * grid.dx if sigma is None else sigma
    d = _periodic_distance(grid, x0)
    values = -(Z / (sigma * np.sqrt(2.0 * np.pi))) * np.exp(-0.5 * (d / sigma) ** 2)
    return Potential(values, grid)


def sponge_profile(grid: Grid1D, width_frac: float, strength: float) -> np.ndarray:
    """양 끝 width_frac·L 구간에서 sin² 로 증가하는 감쇠율"""
    width = width_frac * grid.L
    if width <= 0 or strength <= 0:
        return np.zeros(grid.N)
    offset = grid.x - grid.x_min
    edge = np.minimum(offset, grid.L - offset)
    ramp = np.clip((width - edge) / width, 0.0, 1.0)
    return strength * np.sin(0.5 * np.pi * ramp) ** 2


def absorbing_sponge(grid: Grid1D, width_frac: float, strength: float) -> Potential:
    """순수 허수 흡수층 −iγ(x)"""
    return Potential(-1j * sponge_profile(grid, width_frac, strength), grid)


def commensurate_length(v: float, L_min: float) -> float:
    """e^{ivx} 가 주기적이 되는 L ≥ L_min 중 최소값"""
    if v <= 0:
        return L_min
    q = math.ceil(v * L_min / (2.0 * np.pi) - 1e-12)
    return 2.0 * np.pi * q / v


# ============== 스펙트럴 연산 ==============
def derivative(psi: np.ndarray, grid: Grid1D, order: int = 1) -> np.ndarray:
    return np.fft.ifft((1j * grid.k) ** order * np.fft.fft(psi, axis=-1), axis=-1)


def apply_gp_hamiltonian(psi: np.ndarray, V: Potential) -> np.ndarray:
    """H_GP ψ = [−½∂² + V + |ψ|²] ψ (V 의 실수부)"""
    grid = V.grid
    return -0.5 * derivative(psi, grid, 2) + (V.real + np.abs(psi) ** 2) * psi


def gpg_residual(psi: np.ndarray, V: Potential, mu: float, v: float = 0.0) -> float:
    """‖H_GP ψ − μψ + i v ∂ₓψ‖ / ‖ψ‖"""
    residual = apply_gp_hamiltonian(psi, V) - mu * psi + 1j * v * derivative(psi, V.grid, 1)
    return float(np.linalg.norm(residual) / np.linalg.norm(psi))


def observables(state: FieldState, V: Potential) -> Tuple[float, float, float]:
    """(N, P, E) 스펙트럴 평가"""
    check_same_grid(state.grid, V.grid)
    psi, dx = state.psi, state.grid.dx
    dpsi = derivative(psi, state.grid, 1)
    density = np.abs(psi) ** 2
    N = float(np.sum(density) * dx)
    P = float(np.real(np.sum(np.conj(psi) * (-1j) * dpsi)) * dx)
    E = float(np.sum(0.5 * np.abs(dpsi) ** 2 + V.real * density + 0.5 * density ** 2) * dx)
    return N, P, E


# ============== 분할 단계 전파 ==============
def _expm1_ratio(x: np.ndarray) -> np.ndarray:
    # (e^x − 1)/x, x→0 에서 1
    x = np.asarray(x, dtype=float)
    safe = np.where(x == 0.0, 1.0, x)
    return np.where(x == 0.0, 1.0, np.expm1(safe) / safe)


class SplitStepper:
    """
    i∂ₜψ = [−½∂² + V + |ψ|² − μ + iv∂ₓ] ψ 의 Strang 분할 한 단계

    국소 반단계 (퍼텐셜 + 비선형, 흡수 허수부 포함 해석적 적분)
    → 운동 전단계 (푸리에 공간) → 국소 반단계 → 흡수층 이완
    """

    def __init__(
        self,
        grid: Grid1D,
        potential: Potential,
        dt: float,
        frame: Frame = LAB_FRAME,
        sponge: Optional[Sponge] = None,
    ):
        check_same_grid(grid, potential.grid)
        self.grid = grid
        self.potential = potential
        self.dt = float(dt)
        self.frame = (float(frame[0]), float(frame[1]))
        self.sponge = sponge
        self._w = potential.real - self.frame[0]
        self._gamma = potential.absorbing
        self._kinetic_symbol = 0.5 * grid.k ** 2 - self.frame[1] * grid.k
        self._kinetic_cache: Dict[float, np.ndarray] = {}

    @property
    def local_potential(self) -> np.ndarray:
        """국소 단계의 실수 퍼텐셜 V − μ"""
        return self._w

    # ---------- 하위 단계 ----------
    def kinetic_factor(self, tau: float) -> np.ndarray:
        factor = self._kinetic_cache.get(tau)
        if factor is None:
            factor = np.exp(-1j * self._kinetic_symbol * tau)
            self._kinetic_cache[tau] = factor
        return factor

    def kinetic(self, psi: np.ndarray, tau: float) -> np.ndarray:
        return np.fft.ifft(self.kinetic_factor(tau) * np.fft.fft(psi))

    def local(self, psi: np.ndarray, tau: float) -> np.ndarray:
        density = np.abs(psi) ** 2
        if not self.potential.is_absorbing:
            return psi * np.exp(-1j * (self._w + density) * tau)
        rate = 2.0 * self._gamma * tau
        integrated_density = density * tau * _expm1_ratio(rate)
        return psi * np.exp(self._gamma * tau) * np.exp(-1j * (self._w * tau + integrated_density))

    def sponge_damping(self, tau: float) -> Optional[np.ndarray]:
        if self.sponge is None:
            return None
        return np.exp(-self.sponge.gamma * tau)

    def relax(self, psi: np.ndarray, t: float, tau: float) -> np.ndarray:
        damping = self.sponge_damping(tau)
        if damping is None:
            return psi
        reference = self.sponge.reference
        if reference is None:
            return psi * damping
        target = reference.at(self.grid.x, t, self.frame)
        return target + (psi - target) * damping

    # ---------- 단계 ----------
    def step(self, psi: np.ndarray, t: float, tau: Optional[float] = None) -> np.ndarray:
        """t → t+τ (기본 τ = dt)"""
        tau = self.dt if tau is None else tau
        half = 0.5 * tau
        psi = self.local(psi, half)
        psi = self.kinetic(psi, tau)
        psi = self.local(psi, half)
        return self.relax(psi, t + tau, tau)

    def run(
        self,
        psi: np.ndarray,
        t0: float,
        nsteps: int,
        observer: Optional[Callable[[int, np.ndarray], None]] = None,
    ) -> np.ndarray:
        check_every = max(1, settings.blowup_check_every)
        for i in range(1, nsteps + 1):
            psi = self.step(psi, t0 + (i - 1) * self.dt)
            if i % check_every == 0 or i == nsteps:
                _check_finite(psi, i)
            if observer is not None:
                observer(i, psi)
        return psi


def _check_finite(psi: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(psi)):
        finite = np.abs(psi[np.isfinite(psi)])
        max_abs = float(finite.max()) if finite.size else float("nan")
        raise NumericalBlowupError(f"전파 중 NaN/Inf 발생 (step={step})", step=step, max_abs=max_abs)


def split_step(
    state: FieldState,
    V: Potential,
    dt: float,
    nsteps: int,
    frame: Frame = LAB_FRAME,
    sponge: Optional[Sponge] = None,
) -> FieldState:
    """Strang 분할로 nsteps 전파; 시간은 t + dt·nsteps"""
    check_same_grid(state.grid, V.grid)
    stepper = SplitStepper(state.grid, V, dt, frame, sponge)
    psi = stepper.run(state.psi.copy(), state.t, nsteps)
    return FieldState(psi, state.t + dt * nsteps, state.grid)


# ============== 궤적 ==============
@dataclass
class Trajectory:
    """
    전파 기록: checkpoint_every 단계마다 필드를 저장하고
    state_at(t) 는 가장 가까운 앞 체크포인트에서 같은 dt 로 재적분한다.
    """

    grid: Grid1D
    potential: Potential
    dt: float
    checkpoint_every: int
    frame: Frame = LAB_FRAME
    sponge: Optional[Sponge] = None
    t0: float = 0.0
    checkpoints: List[np.ndarray] = field(default_factory=list)
    steps: int = 0
    last_psi: Optional[np.ndarray] = None
    keep_checkpoints: bool = True

    @classmethod
    def start(
        cls,
        state: FieldState,
        potential: Potential,
        dt: float,
        checkpoint_every: int = settings.quench_checkpoint_every,
        frame: Frame = LAB_FRAME,
        sponge: Optional[Sponge] = None,
        keep_checkpoints: bool = True,
    ) -> "Trajectory":
        trajectory = cls(
            grid=state.grid, potential=potential, dt=dt, checkpoint_every=checkpoint_every,
            frame=frame, sponge=sponge, t0=state.t, keep_checkpoints=keep_checkpoints,
        )
        trajectory.checkpoints.append(state.psi.copy())
        trajectory.last_psi = state.psi.copy()
        return trajectory

    @cached_property
    def stepper(self) -> SplitStepper:
        return SplitStepper(self.grid, self.potential, self.dt, self.frame, self.sponge)

    @property
    def t_end(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def last_state(self) -> FieldState:
        return FieldState(self.last_psi.copy(), self.t_end, self.grid)

    def time_of(self, step: int) -> float:
        return self.t0 + step * self.dt

    def extend(
        self,
        nsteps: int,
        observe_every: int = 0,
        observer: Optional[Callable[[float, np.ndarray], None]] = None,
    ) -> FieldState:
        """마지막 상태에서 nsteps 더 전파"""
        start = self.steps

        def _record(i: int, psi: np.ndarray) -> None:
            step = start + i
            if self.keep_checkpoints and step % self.checkpoint_every == 0:
                self.checkpoints.append(psi.copy())
            if observer is not None and observe_every and step % observe_every == 0:
                observer(self.time_of(step), psi)

        self.last_psi = self.stepper.run(self.last_psi, self.time_of(start), nsteps, _record)
        self.steps += nsteps
        return self.last_state

    def state_at(self, t: float) -> FieldState:
        """t 에서의 상태 (단계 경계에서는 원래 실행과 비트 단위로 같음)"""
        if not self.keep_checkpoints:
            raise ValueError("체크포인트를 저장하지 않은 궤적입니다")
        exact = (t - self.t0) / self.dt
        step = int(math.floor(exact + 1e-9))
        if step < 0:
            raise ValueError(f"궤적 시작 이전 시각입니다: t={t}")
        index = min(step // self.checkpoint_every, len(self.checkpoints) - 1)
        psi = self.checkpoints[index].copy()
        base = index * self.checkpoint_every
        psi = self.stepper.run(psi, self.time_of(base), step - base)
        remainder = (exact - step) * self.dt
        if remainder > 1e-12 * self.dt:
            psi = self.stepper.step(psi, self.time_of(step), remainder)
        return FieldState(psi, t, self.grid)

    def sample(self, t_start: float, t_end: float, stride: int = 1) -> FieldSeries:
        """[t_start, t_end] 의 단계 정렬 시점 (stride 단계 간격) 필드"""
        first = int(math.ceil((t_start - self.t0) / self.dt - 1e-9))
        last = int(math.floor((t_end - self.t0) / self.dt + 1e-9))
        if last < first:
            raise ValueError(f"빈 구간입니다: [{t_start}, {t_end}]")
        state = self.state_at(self.time_of(first))
        psi = state.psi
        times = [self.time_of(first)]
        frames = [psi.copy()]
        step = first
        while step + stride <= last:
            psi = self.stepper.run(psi, self.time_of(step), stride)
            step += stride
            times.append(self.time_of(step))
            frames.append(psi.copy())
        return FieldSeries(np.array(times), np.array(frames), self.grid, self.potential)


# ============== 허수 시간 이완 ==============
def _stationary_residual(psi: np.ndarray, V: Potential) -> Tuple[float, float]:
    h_psi = apply_gp_hamiltonian(psi, V)
    norm2 = np.vdot(psi, psi).real
    mu = float(np.vdot(psi, h_psi).real / norm2)
    residual = float(np.linalg.norm(h_psi - mu * psi) / np.sqrt(norm2))
    return residual, mu


def _renormalize(psi: np.ndarray, dx: float, target: float) -> np.ndarray:
    return psi * np.sqrt(target / (np.sum(np.abs(psi) ** 2) * dx))


def _newton_polish(psi: np.ndarray, V: Potential, N_target: float, mu: float, tol: float) -> np.ndarray:
    """실수 ψ 와 μ 에 대한 Newton-Krylov 로 정상 GPG 방정식 마무리"""
    grid = V.grid
    dx = grid.dx
    size = grid.N
    phase = np.exp(-1j * np.angle(np.sum(psi)))
    real_psi = np.real(psi * phase)
    precond_symbol = 1.0 / (0.5 * grid.k ** 2 + 1.0)

    def residual(unknowns: np.ndarray) -> np.ndarray:
        f = unknowns[:size]
        lam = unknowns[size]
        h_f = np.real(apply_gp_hamiltonian(f.astype(complex), V))
        constraint = (np.sum(f * f) * dx - N_target) / N_target
        return np.concatenate([h_f - lam * f, [constraint]])

    def precondition(vec: np.ndarray) -> np.ndarray:
        out = np.array(vec, dtype=float, copy=True)
        out[:size] = np.real(np.fft.ifft(precond_symbol * np.fft.fft(vec[:size])))
        return out

    inner = LinearOperator((size + 1, size + 1), matvec=precondition, dtype=float)
    rms = float(np.sqrt(np.mean(real_psi ** 2)))
    try:
        solution = newton_krylov(
            residual,
            np.concatenate([real_psi, [mu]]),
            f_tol=0.5 * tol * rms,
            inner_M=inner,
            method="lgmres",
            maxiter=200,
        )
    except NoConvergence as e:
        raise MaxIterationsError(f"Newton 마무리가 수렴하지 않았습니다: {e}")
    return solution[:size].astype(complex)


def imaginary_time(
    state: FieldState,
    V: Potential,
    dtau: float,
    tol: float,
    N_target: Optional[float] = None,
    max_iter: Optional[int] = None,
    polish_below: float = 1e-4,
) -> Tuple[FieldState, float]:
    """
    고정 N 에서 정상 GPG 상태로 이완하고 (상태, μ) 반환

    정규화된 허수 시간 Strang 흐름으로 polish_below 까지 내린 뒤
    (정체 시 dτ 반감) 실수 Newton-Krylov 로 tol 까지 마무리한다.
    """
    check_same_grid(state.grid, V.grid)
    grid = state.grid
    dx = grid.dx
    N_target = float(np.sum(np.abs(state.psi) ** 2) * dx) if N_target is None else N_target
    max_iter = settings.imaginary_time_max_iter if max_iter is None else max_iter
    check_every = settings.imaginary_time_check_every
    V_real = V.real

    psi = _renormalize(state.psi.astype(complex), dx, N_target)
    residual, mu = _stationary_residual(psi, V)
    coarse_target = max(tol, polish_below)
    previous = residual
    kinetic = np.exp(-0.5 * grid.k ** 2 * dtau)
    iteration = 0
    while residual > coarse_target:
        if iteration >= max_iter:
            raise MaxIterationsError(f"허수 시간 이완이 {max_iter} 회 안에 수렴하지 않았습니다 (residual={residual:.3e})")
        for _ in range(check_every):
            psi = psi * np.exp(-0.5 * dtau * (V_real + np.abs(psi) ** 2))
            psi = np.fft.ifft(kinetic * np.fft.fft(psi))
            psi = psi * np.exp(-0.5 * dtau * (V_real + np.abs(psi) ** 2))
            psi = _renormalize(psi, dx, N_target)
        iteration += check_every
        _check_finite(psi, iteration)
        residual, mu = _stationary_residual(psi, V)
        if residual > previous * (1.0 - 1e-3):
            if 0.5 * dtau < settings.imaginary_time_min_dtau:
                break
            dtau *= 0.5
            kinetic = np.exp(-0.5 * grid.k ** 2 * dtau)
            logger.debug(f"허수 시간 정체: dτ → {dtau:.2e} (residual={residual:.3e})")
        previous = residual

    if residual > tol:
        psi = _newton_polish(psi, V, N_target, mu, tol)
        residual, mu = _stationary_residual(psi, V)
    if residual > tol:
        raise MaxIterationsError(f"정상 상태 잔차가 허용 오차를 넘습니다: {residual:.3e} > {tol:.1e}")

    logger.info(f"허수 시간 이완 완료: μ={mu:.10f}, residual={residual:.2e}, 반복={iteration}")
    return FieldState(psi, state.t, grid), mu
