"""BdG-Gibbs 선형 해석: M₀ 연산자, 심플렉틱 곱, Goldstone/Gibbs 모드, Berry-Gibbs 곡률, 스펙트럼, Floquet 전파"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigs, gmres

from app.core.config import settings
from app.core.exceptions import ConsistencyError, GridMismatchError, NumericalBlowupError
from app.models.schemas import RingSpec
from app.services.cnoidal_service import (
    CnoidalParams,
    ThermoDerivatives,
    default_steps,
    solve_ring,
    thermo_derivatives,
    track_branch,
    wavefunction,
    wavefunction_derivative,
)
from app.services.spectral_service import (
    FieldState,
    Grid1D,
    Potential,
    SplitStepper,
    Trajectory,
    check_same_grid,
    derivative,
    gpg_residual,
)

logger = logging.getLogger(__name__)

MODE_LABELS = ("theta", "x", "N", "P")


# ============== 스피너 ==============
@dataclass
class BdGSpinor:
    """z = (u, v) 와 선택적 시간 표지"""

    u: np.ndarray
    v: np.ndarray
    grid: Grid1D
    t: Optional[float] = None

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=complex)
        self.v = np.asarray(self.v, dtype=complex)
        if self.u.shape != (self.grid.N,) or self.v.shape != (self.grid.N,):
            raise GridMismatchError("스피너 성분 길이가 격자와 다릅니다")

    @classmethod
    def from_vector(cls, vector: np.ndarray, grid: Grid1D, t: Optional[float] = None) -> "BdGSpinor":
        return cls(vector[: grid.N], vector[grid.N:], grid, t)

    @classmethod
    def from_field(cls, delta_psi: np.ndarray, grid: Grid1D, t: Optional[float] = None) -> "BdGSpinor":
        """(δψ, δψ*)"""
        return cls(delta_psi, np.conj(delta_psi), grid, t)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])

    def conjugate(self) -> "BdGSpinor":
        """z̄ = (v*, u*)"""
        return BdGSpinor(np.conj(self.v), np.conj(self.u), self.grid, self.t)

    def norm(self) -> float:
        return float(np.sqrt((np.vdot(self.u, self.u).real + np.vdot(self.v, self.v).real) * self.grid.dx))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v)))

    def __add__(self, other: "BdGSpinor") -> "BdGSpinor":
        check_same_grid(self.grid, other.grid)
        return BdGSpinor(self.u + other.u, self.v + other.v, self.grid, self.t)

    def __sub__(self, other: "BdGSpinor") -> "BdGSpinor":
        check_same_grid(self.grid, other.grid)
        return BdGSpinor(self.u - other.u, self.v - other.v, self.grid, self.t)

    def __mul__(self, scalar: complex) -> "BdGSpinor":
        return BdGSpinor(scalar * self.u, scalar * self.v, self.grid, self.t)

    __rmul__ = __mul__


def symplectic_product(z: BdGSpinor, z2: BdGSpinor) -> complex:
    """(z|z₂) = ∫dx (u* u₂ − v* v₂)"""
    check_same_grid(z.grid, z2.grid)
    return complex((np.vdot(z.u, z2.u) - np.vdot(z.v, z2.v)) * z.grid.dx)


def density_wavefunction(z: BdGSpinor, psi0: np.ndarray) -> np.ndarray:
    """r(x) = −i z_θ† σ_z z = ψ₀* u + ψ₀ v (z 가 유발하는 밀도 요동)"""
    return np.conj(psi0) * z.u + psi0 * z.v


def phase_mode(psi: np.ndarray, grid: Grid1D, t: Optional[float] = None) -> BdGSpinor:
    """z_θ = (−iψ, iψ*)"""
    return BdGSpinor(-1j * psi, 1j * np.conj(psi), grid, t)


def translation_mode(dpsi: np.ndarray, grid: Grid1D, t: Optional[float] = None) -> BdGSpinor:
    """z_x = −(∂ψ, ∂ψ*)"""
    return BdGSpinor(-dpsi, -np.conj(dpsi), grid, t)


@dataclass
class SymplecticGram:
    """모드 쌍의 심플렉틱 곱 (z_a|z_b)"""

    labels: Tuple[str, ...]
    gram: np.ndarray

    @classmethod
    def of(cls, modes: Dict[str, BdGSpinor], labels: Sequence[str] = MODE_LABELS) -> "SymplecticGram":
        labels = tuple(labels)
        gram = np.array([[symplectic_product(modes[a], modes[b]) for b in labels] for a in labels])
        return cls(labels, gram)

    def entry(self, a: str, b: str) -> complex:
        return complex(self.gram[self.labels.index(a), self.labels.index(b)])

    @property
    def anti_hermiticity_error(self) -> float:
        """max |(z_a|z_b) + (z_a|z_b)*|. 자기 켤레 모드의 곱은 순허수"""
        return float(np.max(np.abs(self.gram + np.conj(self.gram))))

    def deviation_from(self, expected: np.ndarray) -> float:
        return float(np.max(np.abs(self.gram - expected)))


def expected_goldstone_gibbs_gram() -> np.ndarray:
    """(θ, x, N, P) 순서의 iΩ"""
    omega = np.zeros((4, 4))
    omega[0, 2] = omega[1, 3] = 1.0
    omega[2, 0] = omega[3, 1] = -1.0
    return 1j * omega


# ============== M₀ 연산자 ==============
class BdGOperator:
    """
    M₀ = [[N₀, A₀], [−A₀*, −N₀*]]
    N₀ = −½∂² + V + 2|Ψ₀|² − μ + iv∂ₓ, A₀ = Ψ₀²
    """

    def __init__(self, psi: np.ndarray, potential: Potential, mu: float = 0.0, v: float = 0.0):
        self.grid = potential.grid
        self.psi = np.asarray(psi, dtype=complex)
        self.potential = potential
        self.mu = float(mu)
        self.v = float(v)
        self._diagonal = potential.real + 2.0 * np.abs(self.psi) ** 2 - self.mu
        self._anomalous = self.psi ** 2

    @property
    def size(self) -> int:
        return 2 * self.grid.N

    def _n0(self, f: np.ndarray) -> np.ndarray:
        return -0.5 * derivative(f, self.grid, 2) + self._diagonal * f + 1j * self.v * derivative(f, self.grid, 1)

    def _n0_conj(self, f: np.ndarray) -> np.ndarray:
        return np.conj(self._n0(np.conj(f)))

    def apply(self, z: BdGSpinor) -> BdGSpinor:
        check_same_grid(z.grid, self.grid)
        u = self._n0(z.u) + self._anomalous * z.v
        v = -np.conj(self._anomalous) * z.u - self._n0_conj(z.v)
        return BdGSpinor(u, v, self.grid, z.t)

    def apply_vector(self, vector: np.ndarray) -> np.ndarray:
        return self.apply(BdGSpinor.from_vector(vector, self.grid)).as_vector()

    def matrix(self) -> np.ndarray:
        """스펙트럴 미분 행렬로 만든 조밀 2N×2N 행렬"""
        n = self.grid.N
        identity = np.eye(n)
        k = self.grid.k
        d1 = np.fft.ifft((1j * k)[:, None] * np.fft.fft(identity, axis=0), axis=0)
        d2 = np.fft.ifft((-(k ** 2))[:, None] * np.fft.fft(identity, axis=0), axis=0)
        n0 = -0.5 * d2 + np.diag(self._diagonal) + 1j * self.v * d1
        anomalous = np.diag(self._anomalous)
        return np.block([[n0, anomalous], [-np.conj(anomalous), -np.conj(n0)]])

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator((self.size, self.size), matvec=self.apply_vector, dtype=complex)


def build_M0(
    background: FieldState,
    V: Potential,
    mu: float = 0.0,
    v: float = 0.0,
    stationary: bool = True,
) -> BdGOperator:
    """배경 ψ 와 승수 (μ, v) 에서 M₀ 구성; stationary 면 GPG 잔차를 먼저 확인"""
    check_same_grid(background.grid, V.grid)
    if stationary:
        residual = gpg_residual(background.psi, V, mu, v)
        if residual > settings.stationary_residual_tol:
            raise ConsistencyError(
                f"정상 해석에는 GPG 잔차가 {settings.stationary_residual_tol:.0e} 미만이어야 합니다: {residual:.3e}"
            )
    return BdGOperator(background.psi, V, mu, v)


def pseudo_hermiticity_error(op: BdGOperator, z: BdGSpinor, z2: BdGSpinor) -> float:
    """|(z|M₀z′) − (M₀z|z′)| / (‖z‖‖M₀z′‖)"""
    lhs = symplectic_product(z, op.apply(z2))
    rhs = symplectic_product(op.apply(z), z2)
    scale = z.norm() * op.apply(z2).norm() + z2.norm() * op.apply(z).norm()
    return abs(lhs - rhs) / scale


# ============== cnoidal 배경 ==============
@dataclass
class CnoidalBackground:
    params: CnoidalParams
    grid: Grid1D
    state: FieldState
    potential: Potential

    @property
    def frame(self) -> Tuple[float, float]:
        return self.params.mu, self.params.v

    def operator(self) -> BdGOperator:
        return build_M0(self.state, self.potential, self.params.mu, self.params.v)


def cnoidal_background(params: CnoidalParams, N_grid: int) -> CnoidalBackground:
    """x=0 대칭 격자 위 Ψ₀ (밀도 최소가 x=0, θ(0)=0)"""
    grid = Grid1D.centered(params.L, N_grid)
    state = FieldState(wavefunction(params, grid.x), 0.0, grid)
    return CnoidalBackground(params, grid, state, Potential.zero(grid))


# ============== Goldstone-Gibbs 모드 ==============
WavefunctionFamily = Callable[[float, float, np.ndarray], np.ndarray]


def cnoidal_family(spec: RingSpec, nu_ref: float) -> WavefunctionFamily:
    """(N, P, x) → 같은 가지의 Ψ₀ (L, ℓ, q 고정)"""

    def family(N: float, P: float, x: np.ndarray) -> np.ndarray:
        return wavefunction(track_branch(spec.with_charges(N, P), nu_ref), x)

    return family


def gauge_shift(family: WavefunctionFamily, c: float) -> WavefunctionFamily:
    """일반화 게이지 변환 x₀(N) = c·N: Ψ(x) → Ψ(x − cN)"""

    def shifted(N: float, P: float, x: np.ndarray) -> np.ndarray:
        return family(N, P, x - c * N)

    return shifted


def _charge_derivatives(
    family: WavefunctionFamily, N: float, P: float, hN: float, hP: float, x: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    d_N = (family(N + hN, P, x) - family(N - hN, P, x)) / (2.0 * hN)
    d_P = (family(N, P + hP, x) - family(N, P - hP, x)) / (2.0 * hP)
    return d_N, d_P


def berry_gibbs_curvature_family(
    family: WavefunctionFamily, N: float, P: float, hN: float, hP: float, grid: Grid1D
) -> float:
    """F_NP = ∫dx [∂_Nη ∂_Pn − ∂_Nn ∂_Pη] (n = |Ψ|², η = arg Ψ)"""
    psi = family(N, P, grid.x)
    d_N, d_P = _charge_derivatives(family, N, P, hN, hP, grid.x)
    n = np.abs(psi) ** 2
    dn_N, dn_P = 2.0 * np.real(np.conj(psi) * d_N), 2.0 * np.real(np.conj(psi) * d_P)
    deta_N, deta_P = np.imag(np.conj(psi) * d_N) / n, np.imag(np.conj(psi) * d_P) / n
    return float(np.sum(deta_N * dn_P - dn_N * deta_P) * grid.dx)


def berry_gibbs_curvature(
    spec: RingSpec,
    h: Optional[Tuple[float, float]] = None,
    N_grid: int = 256,
    nu_hint: Optional[float] = None,
    shift: float = 0.0,
) -> float:
    """cnoidal 가족의 F_NP (shift ≠ 0 이면 x₀ = shift·N 게이지에서)"""
    params = solve_ring(spec, nu_hint=nu_hint)
    hN, hP = default_steps(spec) if h is None else h
    family = cnoidal_family(spec, params.nu)
    if shift:
        family = gauge_shift(family, shift)
    grid = Grid1D.centered(spec.L, N_grid)
    curvature = berry_gibbs_curvature_family(family, spec.N, spec.P, hN, hP, grid)
    logger.info(f"Berry-Gibbs 곡률: F_NP={curvature:.3e} (shift={shift})")
    return curvature


@dataclass
class GoldstoneGibbsModes:
    background: CnoidalBackground
    modes: Dict[str, BdGSpinor]
    gram: SymplecticGram
    dmu_dN: float
    dv_dN: float
    dmu_dP: float
    dv_dP: float

    @property
    def gram_error(self) -> float:
        return self.gram.deviation_from(expected_goldstone_gibbs_gram())

    def source(self, charge: str) -> BdGSpinor:
        """i(∂_A μ) z_θ + i(∂_A v) z_x"""
        dmu, dv = (self.dmu_dN, self.dv_dN) if charge == "N" else (self.dmu_dP, self.dv_dP)
        return 1j * dmu * self.modes["theta"] + 1j * dv * self.modes["x"]


def goldstone_gibbs_modes(
    spec: RingSpec,
    h: Optional[Tuple[float, float]] = None,
    N_grid: int = 256,
    nu_hint: Optional[float] = None,
    check: bool = True,
) -> GoldstoneGibbsModes:
    """
    z_θ, z_x (해석적 미분) 와 z_N, z_P (고정 게이지 중심 차분), 그리고 4×4 Gram

    check=True 면 Gram = iΩ 를 symplectic_tol 안에서 확인한다.
    """
    params = solve_ring(spec, nu_hint=nu_hint)
    background = cnoidal_background(params, N_grid)
    grid = background.grid
    psi = background.state.psi
    hN, hP = default_steps(spec) if h is None else h

    d_N, d_P = _charge_derivatives(cnoidal_family(spec, params.nu), spec.N, spec.P, hN, hP, grid.x)
    modes = {
        "theta": phase_mode(psi, grid),
        "x": translation_mode(wavefunction_derivative(params, grid.x), grid),
        "N": BdGSpinor.from_field(d_N, grid),
        "P": BdGSpinor.from_field(d_P, grid),
    }
    gram = SymplecticGram.of(modes)
    thermo = thermo_derivatives(spec, h=(hN, hP), nu_hint=params.nu, check=False)
    jac = thermo.multiplier_jacobian
    result = GoldstoneGibbsModes(
        background, modes, gram,
        dmu_dN=float(jac[0, 0]), dv_dN=float(jac[1, 0]), dmu_dP=float(jac[0, 1]), dv_dP=float(jac[1, 1]),
    )
    logger.info(f"Goldstone-Gibbs Gram 오차: {result.gram_error:.2e}, (z_θ|z_x)={gram.entry('theta', 'x'):.2e}")
    if check and result.gram_error > settings.symplectic_tol:
        raise ConsistencyError(f"Gram 행렬이 iΩ 와 다릅니다: 최대 편차 {result.gram_error:.3e}")
    return result


def gibbs_source_check(modes: GoldstoneGibbsModes, charge: str = "N") -> float:
    """‖M₀z_A − i(∂_Aμ)z_θ − i(∂_Av)z_x‖ / ‖M₀z_A‖"""
    op = modes.background.operator()
    lhs = op.apply(modes.modes[charge])
    return (lhs - modes.source(charge)).norm() / lhs.norm()


def ballistic_gibbs_mode(modes: GoldstoneGibbsModes, charge: str, t: float) -> BdGSpinor:
    """선형 동역학에서 Gibbs 모드의 탄도 성장 z_A(t) = z_A + t(∂_Aμ z_θ + ∂_Av z_x)"""
    drift = modes.source(charge) * (-1j)
    return modes.modes[charge] + drift * t


HYBRID_LABELS = ("X1", "X2", "P1", "P2")


@dataclass
class HybridGoldstoneGibbsModes:
    """
    ∂²_AB E 를 대각화하는 회전 R 로 섞은 Goldstone-Gibbs 모드

    z'_A = Σ_B R_BA z_B, z'_α 도 같은 R 로 (θ↔N, x↔P 짝). R 이 직교이므로 Gram 은 iΩ 그대로이고
    M₀ z'_A = i κ_A z'_α (κ_A = 1/M_A) 가 된다.
    """

    base: GoldstoneGibbsModes
    rotation: np.ndarray
    inverse_masses: np.ndarray
    modes: Dict[str, BdGSpinor]
    gram: SymplecticGram
    hessian: np.ndarray

    @property
    def masses(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / self.inverse_masses

    @property
    def gram_error(self) -> float:
        return self.gram.deviation_from(expected_goldstone_gibbs_gram())

    @property
    def rotated_hessian(self) -> np.ndarray:
        return self.rotation.T @ self.hessian @ self.rotation

    @property
    def off_diagonal(self) -> float:
        """|R^T H R|₁₂ / max|κ|"""
        return float(abs(self.rotated_hessian[0, 1]) / np.max(np.abs(self.inverse_masses)))

    def source_check(self, index: int) -> float:
        """‖M₀z'_A − iκ_A z'_α‖ / ‖M₀z'_A‖"""
        op = self.base.background.operator()
        lhs = op.apply(self.modes[HYBRID_LABELS[2 + index]])
        expected = 1j * self.inverse_masses[index] * self.modes[HYBRID_LABELS[index]]
        return (lhs - expected).norm() / lhs.norm()


def hybrid_goldstone_gibbs_modes(modes: GoldstoneGibbsModes, thermo: ThermoDerivatives) -> HybridGoldstoneGibbsModes:
    """대칭화한 ∂²_AB E 의 고유분해 (eigh) 로 Goldstone-Gibbs 부분공간을 회전"""
    hessian = 0.5 * (thermo.hessian + thermo.hessian.T)
    inverse_masses, rotation = np.linalg.eigh(hessian)
    goldstone = [modes.modes["theta"], modes.modes["x"]]
    gibbs = [modes.modes["N"], modes.modes["P"]]
    hybrid: Dict[str, BdGSpinor] = {}
    for a in range(2):
        hybrid[HYBRID_LABELS[a]] = rotation[0, a] * goldstone[0] + rotation[1, a] * goldstone[1]
        hybrid[HYBRID_LABELS[2 + a]] = rotation[0, a] * gibbs[0] + rotation[1, a] * gibbs[1]
    result = HybridGoldstoneGibbsModes(
        modes, rotation, inverse_masses, hybrid, SymplecticGram.of(hybrid, HYBRID_LABELS), hessian
    )
    logger.info(f"혼성 Goldstone-Gibbs 모드: 1/M={inverse_masses}, Gram 오차={result.gram_error:.2e}")
    return result


# ============== Bogoliubov 스펙트럼 ==============
@dataclass
class BogoliubovSpectrum:
    eigenvalues: np.ndarray
    modes: List[BdGSpinor]
    norms: np.ndarray
    unstable: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def norm_sign(self) -> np.ndarray:
        scale = np.array([z.norm() ** 2 for z in self.modes])
        sign = np.sign(self.norms)
        sign[np.abs(self.norms) <= settings.zero_mode_tol * scale] = 0.0
        return sign

    def physical(self) -> List[int]:
        """양의 노름, 안정한 모드 (ε 오름차순)"""
        keep = [i for i, s in enumerate(self.norm_sign) if s > 0 and not self.unstable[i]]
        return sorted(keep, key=lambda i: self.eigenvalues[i].real)

    def near_zero(self, tol: float = settings.zero_mode_tol) -> List[int]:
        return [i for i, e in enumerate(self.eigenvalues) if abs(e) < tol]

    def as_rows(self) -> List[Dict[str, float]]:
        return [
            {"eps_re": float(e.real), "eps_im": float(e.imag), "norm_sign": float(s)}
            for e, s in zip(self.eigenvalues, self.norm_sign)
        ]


def _normalize(z: BdGSpinor) -> Tuple[BdGSpinor, float]:
    z = z * (1.0 / z.norm())
    norm = symplectic_product(z, z).real
    if abs(norm) > settings.zero_mode_tol:
        z = z * (1.0 / np.sqrt(abs(norm)))
        norm = float(np.sign(norm))
    return z, norm


def _iterative_eigs(op: BdGOperator, n_eigs: int, sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    size = op.size

    def shifted(y: np.ndarray) -> np.ndarray:
        return op.apply_vector(y) - sigma * y

    shifted_op = LinearOperator((size, size), matvec=shifted, dtype=complex)

    def solve(b: np.ndarray) -> np.ndarray:
        x, info = gmres(shifted_op, b, rtol=1e-12, atol=0.0, restart=200, maxiter=2000)
        if info != 0:
            logger.warning(f"시프트-역변환 GMRES 미수렴 (info={info})")
        return x

    inverse = LinearOperator((size, size), matvec=solve, dtype=complex)
    return eigs(op.as_linear_operator(), k=n_eigs, sigma=sigma, OPinv=inverse)


def bogoliubov_spectrum(op: BdGOperator, n_eigs: Optional[int] = None, sigma: float = 1e-3) -> BogoliubovSpectrum:
    """
    M₀ 의 고유쌍 (격자가 dense_eig_max_points 이하면 조밀 분해, 아니면 시프트-역변환)

    모드는 (z|z) = ±1 로 정규화하고, |Im ε| 가 instability_tol 을 넘는 모드는 불안정으로 표시한다.
    """
    if op.grid.N <= settings.dense_eig_max_points:
        values, vectors = np.linalg.eig(op.matrix())
        if n_eigs is not None and n_eigs < len(values):
            order = np.argsort(np.abs(values))[:n_eigs]
            values, vectors = values[order], vectors[:, order]
    else:
        values, vectors = _iterative_eigs(op, n_eigs or 64, sigma)

    modes, norms = [], []
    for column in vectors.T:
        z, norm = _normalize(BdGSpinor.from_vector(column, op.grid))
        modes.append(z)
        norms.append(norm)
    unstable = np.abs(values.imag) > settings.instability_tol
    if np.any(unstable):
        logger.warning(f"동역학적 불안정 모드 {int(np.sum(unstable))}개 (max Im ε={np.max(np.abs(values.imag)):.3e})")
    return BogoliubovSpectrum(values, modes, np.array(norms), unstable)


def homogeneous_dispersion(k: np.ndarray) -> np.ndarray:
    """ε(k) = √(k²/2 (k²/2 + 2))"""
    ek = 0.5 * np.asarray(k) ** 2
    return np.sqrt(ek * (ek + 2.0))


def near_zero_subspace(
    spectrum: BogoliubovSpectrum,
    reference: Sequence[BdGSpinor],
    tol: float = settings.zero_mode_tol,
    rank_tol: float = 1e-3,
) -> Tuple[int, float]:
    """
    |ε| < tol 인 고유벡터들이 펼치는 부분공간의 수치적 계수와
    reference 모드가 그 공간 밖으로 벗어난 최대 상대 잔차

    영 모드는 Gibbs 모드와 Jordan 블록을 이루므로 고유값 개수 대신 계수로 센다.
    """
    indices = spectrum.near_zero(tol)
    if not indices:
        return 0, 1.0
    basis = np.column_stack([spectrum.modes[i].as_vector() for i in indices])
    left, singular, _ = np.linalg.svd(basis, full_matrices=False)
    rank = int(np.sum(singular > rank_tol * singular[0]))
    span = left[:, :rank]
    worst = 0.0
    for z in reference:
        vector = z.as_vector()
        residual = vector - span @ (span.conj().T @ vector)
        worst = max(worst, float(np.linalg.norm(residual) / np.linalg.norm(vector)))
    return rank, worst


# ============== 선형 전파 (Strang 단계의 접선 사상) ==============
def _tangent_local(stepper: SplitStepper, psi: np.ndarray, u: np.ndarray, v: np.ndarray, tau: float):
    n = np.abs(psi) ** 2
    rotation = np.exp(-1j * (stepper.local_potential + n) * tau)
    u_next = rotation * ((1.0 - 1j * tau * n) * u - 1j * tau * psi ** 2 * v)
    v_next = np.conj(rotation) * ((1.0 + 1j * tau * n) * v + 1j * tau * np.conj(psi) ** 2 * u)
    return u_next, v_next


def _tangent_step(stepper: SplitStepper, psi: np.ndarray, u: np.ndarray, v: np.ndarray, t: float, tau: float):
    """배경 한 단계와 접선 벡터 한 단계를 함께 진행"""
    half = 0.5 * tau
    u, v = _tangent_local(stepper, psi, u, v, half)
    psi = stepper.local(psi, half)
    u = stepper.kinetic(u, tau)
    v = np.conj(stepper.kinetic(np.conj(v), tau))
    psi = stepper.kinetic(psi, tau)
    u, v = _tangent_local(stepper, psi, u, v, half)
    psi = stepper.local(psi, half)
    damping = stepper.sponge_damping(tau)
    if damping is not None:
        u, v = u * damping, v * damping
    psi = stepper.relax(psi, t + tau, tau)
    return psi, u, v


def tangent_propagate(
    z: BdGSpinor, psi_start: np.ndarray, t_start: float, stepper: SplitStepper, duration: float
) -> BdGSpinor:
    """i∂ₜz = M₀(t)z 를 배경과 함께 duration 만큼 (마지막 부분 단계 포함) 적분"""
    if stepper.potential.is_absorbing:
        raise ValueError("선형 전파는 실수 퍼텐셜에서만 지원합니다")
    check_same_grid(z.grid, stepper.grid)
    nsteps = int(np.floor(duration / stepper.dt + 1e-9))
    remainder = duration - nsteps * stepper.dt
    psi, u, v = psi_start.copy(), z.u.copy(), z.v.copy()
    t = t_start
    check_every = max(1, settings.blowup_check_every)
    for i in range(1, nsteps + 1):
        psi, u, v = _tangent_step(stepper, psi, u, v, t, stepper.dt)
        t = t_start + i * stepper.dt
        if i % check_every == 0 and not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NumericalBlowupError(f"선형 전파 중 NaN/Inf 발생 (step={i})", step=i)
    if remainder > 1e-12 * stepper.dt:
        psi, u, v = _tangent_step(stepper, psi, u, v, t, remainder)
    result = BdGSpinor(u, v, z.grid, t_start + duration)
    if not result.is_finite():
        raise NumericalBlowupError("선형 전파 결과에 NaN/Inf 가 있습니다", step=nsteps)
    return result


def floquet_propagate(z: BdGSpinor, trajectory: Trajectory, period: float, t0: Optional[float] = None) -> BdGSpinor:
    """배경 궤적 위에서 z 를 t0 → t0+T 로 전파 (기본 t0 = z.t)"""
    t0 = z.t if t0 is None else t0
    if t0 is None:
        raise ValueError("시작 시각 t0 가 필요합니다")
    if t0 + period > trajectory.t_end + 1e-9:
        logger.warning(
            f"배경 궤적 구간 [{trajectory.t0}, {trajectory.t_end}] 이 한 주기 [{t0}, {t0 + period}] 를 덮지 않습니다"
        )
    start = trajectory.state_at(t0)
    return tangent_propagate(z, start.psi, t0, trajectory.stepper, period)


def temporal_mode(trajectory: Trajectory, t: float) -> BdGSpinor:
    """z_t = (∂ₜψ, ∂ₜψ*): 한 단계 간격 중심 차분"""
    h = trajectory.dt
    forward = trajectory.state_at(t + h).psi
    backward = trajectory.state_at(t - h).psi
    return BdGSpinor.from_field((forward - backward) / (2.0 * h), trajectory.grid, t)


def to_gibbs_frame(z: BdGSpinor, mu: float, t: float) -> BdGSpinor:
    """ψ_G = e^{iμt}ψ 에 맞춘 스피너 (u e^{iμt}, v e^{−iμt})"""
    phase = np.exp(1j * mu * t)
    return BdGSpinor(z.u * phase, z.v * np.conj(phase), z.grid, z.t)


def to_lab_frame(z: BdGSpinor, mu: float, t: float) -> BdGSpinor:
    return to_gibbs_frame(z, -mu, t)


def monodromy_error(z0: BdGSpinor, z1: BdGSpinor, window: Optional[np.ndarray] = None) -> float:
    """관측 창 안에서 ‖z₁ − z₀‖/‖z₀‖"""
    check_same_grid(z0.grid, z1.grid)
    mask = np.ones(z0.grid.N, dtype=bool) if window is None else window
    diff = np.concatenate([(z1.u - z0.u)[mask], (z1.v - z0.v)[mask]])
    ref = np.concatenate([z0.u[mask], z0.v[mask]])
    return float(np.linalg.norm(diff) / np.linalg.norm(ref))


def fng_monodromy(
    trajectory: Trajectory, period: float, mu: float, t0: float, window: Optional[np.ndarray] = None
) -> Tuple[float, float]:
    """z_θ, z_t 를 한 주기 전파해 Gibbs 좌표에서 처음과 비교한 상대 오차 (θ, t)"""
    psi0 = trajectory.state_at(t0).psi
    errors = []
    for z in (phase_mode(psi0, trajectory.grid, t0), temporal_mode(trajectory, t0)):
        z1 = floquet_propagate(z, trajectory, period, t0)
        errors.append(monodromy_error(to_gibbs_frame(z, mu, t0), to_gibbs_frame(z1, mu, t0 + period), window))
    logger.info(f"FNG 모노드로미: z_θ 오차={errors[0]:.2e}, z_t 오차={errors[1]:.2e}")
    return errors[0], errors[1]
