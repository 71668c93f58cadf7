"""링 위 cnoidal 파 (GPG 방정식의 해석해): 매칭 조건, 보존량, 열역학 미분"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from app.core.config import settings
from app.core.exceptions import BranchJumpError, ConfigError, ConsistencyError, NoSolutionError
from app.models.schemas import RingSpec
from app.services.special_math_service import (
    ellint_E_complete,
    ellint_K,
    ellint_Pi,
    ellint_Pi_complete,
    fg_integrals,
    jacobi_am,
    jacobi_sncndn,
)

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class CnoidalParams:
    """cnoidal 해를 완전히 정하는 매개변수"""

    n1: float
    n2: float
    n3: float
    nu: float
    m: float
    mu_v: float
    J: float
    v: float
    mu: float
    a: float
    ell: int
    q: int
    L: float
    w_n: float

    @property
    def delta(self) -> float:
        """n3 − n1"""
        return self.n3 - self.n1

    @property
    def wavenumber(self) -> float:
        """√(n3 − n1)"""
        return math.sqrt(self.delta)

    @property
    def K(self) -> float:
        return float(ellint_K(self.nu))

    @property
    def E(self) -> float:
        return float(ellint_E_complete(self.nu))

    @property
    def nbar(self) -> float:
        return self.n1 + self.delta * (1.0 - self.E / self.K)

    def as_row(self) -> Dict[str, float]:
        return {
            "n1": self.n1, "n2": self.n2, "n3": self.n3, "nu": self.nu, "m": self.m,
            "mu_v": self.mu_v, "J": self.J, "v": self.v, "mu": self.mu, "a": self.a,
            "L": self.L, "w_n": self.w_n,
        }


# ============== 근과 매개변수 ==============
def _bloch_slope(n1: float, n2: float, n3: float, nu: float) -> Tuple[float, float, float]:
    """(J, m, w_n), w_n = J Π(m,ν) / (n1 K)"""
    if n1 <= 0.0:
        raise ValueError(f"n1 은 양수여야 합니다: {n1}")
    J = math.sqrt(n1 * n2 * n3)
    m = 1.0 - n2 / n1
    w_n = J * float(ellint_Pi_complete(m, nu)) / (n1 * float(ellint_K(nu)))
    return J, m, w_n


def params_from_roots(n1: float, n2: float, n3: float, ell: int, q: int) -> CnoidalParams:
    """근 (n1, n2, n3) 에서 L = ℓa, v = 2πq/L − w_n 인 링 해 구성"""
    if not (0.0 < n1 <= n2 < n3):
        raise ValueError(f"근은 0 < n1 ≤ n2 < n3 를 만족해야 합니다: {(n1, n2, n3)}")
    delta = n3 - n1
    nu = (n2 - n1) / delta
    K = float(ellint_K(nu))
    a = 2.0 * K / math.sqrt(delta)
    L = ell * a
    J, m, w_n = _bloch_slope(n1, n2, n3, nu)
    v = TWO_PI * q / L - w_n
    mu_v = 0.5 * (n1 + n2 + n3)
    return CnoidalParams(
        n1=n1, n2=n2, n3=n3, nu=nu, m=m, mu_v=mu_v, J=J, v=v, mu=mu_v - 0.5 * v * v,
        a=a, ell=ell, q=q, L=L, w_n=w_n,
    )


def roots_from_invariants(J: float, mu_v: float, nu: float) -> Tuple[float, float, float]:
    """
    n1+n2+n3 = 2μ_v, n1 n2 n3 = J², (n2−n1)/(n3−n1) = ν 를 만족하는 근

    n1 = s, Δ = (2μ_v − 3s)/(1+ν) 로 두고 s(s+νΔ)(s+Δ) = J² 를 s 에 대해 푼다.
    """
    if not (0.0 <= nu < 1.0):
        raise ConfigError(f"ν 는 [0,1) 이어야 합니다: {nu}", key="nu")
    if J <= 0:
        raise ConfigError(f"J 는 양수여야 합니다: {J}", key="J")
    if mu_v <= 0:
        raise ConfigError(f"μ_v 는 양수여야 합니다: {mu_v}", key="mu_v")
    s_max = 2.0 * mu_v / 3.0

    def cubic(s: float) -> float:
        delta = (2.0 * mu_v - 3.0 * s) / (1.0 + nu)
        return s * (s + nu * delta) * (s + delta) - J * J

    if cubic(s_max) * cubic(0.0) > 0:
        raise NoSolutionError(f"J={J}, μ_v={mu_v}, ν={nu} 에 대한 근이 없습니다", bracket=(0.0, s_max))
    s = brentq(cubic, 0.0, s_max, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    delta = (2.0 * mu_v - 3.0 * s) / (1.0 + nu)
    return s, s + nu * delta, s + delta


def period_for(J: float, mu_v: float, nu: float) -> float:
    """고정 (J, μ_v) 가족에서의 cnoidal 주기 a = 2K(ν)/√(n3−n1)"""
    n1, _, n3 = roots_from_invariants(J, mu_v, nu)
    return float(2.0 * ellint_K(nu) / math.sqrt(n3 - n1))


def ring_spec(params: CnoidalParams) -> RingSpec:
    """해가 함의하는 (n̄, p̄, L, ℓ, q)"""
    N, P, _ = charges(params)
    return RingSpec(nbar=N / params.L, pbar=P / params.L, L=params.L, ell=params.ell, q=params.q)


# ============== 링 방정식 ==============
def _roots_of_nu(nu: float, spec: RingSpec) -> Tuple[float, float, float]:
    K = float(ellint_K(nu))
    E = float(ellint_E_complete(nu))
    delta = (2.0 * K * spec.ell / spec.L) ** 2
    n1 = spec.nbar - delta * (1.0 - E / K)
    return n1, n1 + nu * delta, n1 + delta


def _winding_residual(nu: float, spec: RingSpec) -> float:
    """p̄/n̄ + J[Π(m,ν)/(n1 K) − 1/n̄] − 2πq/L"""
    n1, n2, n3 = _roots_of_nu(nu, spec)
    if n1 <= 0.0:
        return float("nan")
    J, _, w_n = _bloch_slope(n1, n2, n3, nu)
    return spec.pbar / spec.nbar + w_n - J / spec.nbar - TWO_PI * spec.q / spec.L


def _nu_upper(spec: RingSpec) -> float:
    """n1(ν) > 0 인 ν 의 상한"""
    top = 1.0 - settings.elliptic_nu_eps
    if _roots_of_nu(top, spec)[0] > 0.0:
        return top
    return brentq(lambda nu: _roots_of_nu(nu, spec)[0], 0.0, top, xtol=1e-16, maxiter=200)


def _scan_grid(nu_max: float) -> np.ndarray:
    points = settings.ring_scan_points
    decades = np.logspace(-settings.ring_scan_decades, -1, points // 4)
    grid = np.concatenate([
        nu_max * decades,
        np.linspace(0.0, nu_max, points)[1:-1],
        nu_max * (1.0 - decades),
    ])
    return np.unique(grid[(grid > 0.0) & (grid < nu_max)])


def _params_at(nu: float, spec: RingSpec) -> CnoidalParams:
    n1, n2, n3 = _roots_of_nu(nu, spec)
    if nu == 0.0:
        # 균질 평면파 극한: n(x) = n̄, θ' = √n3
        J = n1 * math.sqrt(n3)
        w_n = J / n1
        v = spec.pbar / spec.nbar - J / spec.nbar
        mu_v = 0.5 * (n1 + n2 + n3)
        return CnoidalParams(
            n1=n1, n2=n2, n3=n3, nu=0.0, m=0.0, mu_v=mu_v, J=J, v=v, mu=mu_v - 0.5 * v * v,
            a=spec.L / spec.ell, ell=spec.ell, q=spec.q, L=spec.L, w_n=w_n,
        )
    J, m, w_n = _bloch_slope(n1, n2, n3, nu)
    v = spec.pbar / spec.nbar - J / spec.nbar
    mu_v = 0.5 * (n1 + n2 + n3)
    K = float(ellint_K(nu))
    return CnoidalParams(
        n1=n1, n2=n2, n3=n3, nu=nu, m=m, mu_v=mu_v, J=J, v=v, mu=mu_v - 0.5 * v * v,
        a=2.0 * K / math.sqrt(n3 - n1), ell=spec.ell, q=spec.q, L=spec.L, w_n=w_n,
    )


def solve_ring_branches(spec: RingSpec) -> List[CnoidalParams]:
    """
    ν ∈ [0,1) 에서 닫힌 3-방정식 계를 만족하는 모든 해

    근 n_i 를 ν 로 표현한 뒤 양 끝에서 로그 조밀화한 격자로 부호 변화를 찾고
    brentq 로 다듬는다.
    """
    nu_max = _nu_upper(spec)
    plane_wave_mismatch = spec.pbar / spec.nbar - TWO_PI * spec.q / spec.L
    roots: List[float] = []
    if abs(plane_wave_mismatch) <= settings.ring_residual_tol * max(1.0, abs(spec.pbar / spec.nbar)):
        roots.append(0.0)

    grid = _scan_grid(nu_max)
    values = np.array([_winding_residual(nu, spec) for nu in grid])
    for left, right, f_left, f_right in zip(grid[:-1], grid[1:], values[:-1], values[1:]):
        if not (np.isfinite(f_left) and np.isfinite(f_right)):
            continue
        if f_left == 0.0:
            roots.append(float(left))
        elif f_left * f_right < 0.0:
            roots.append(brentq(_winding_residual, left, right, args=(spec,), xtol=settings.ring_root_xtol, maxiter=200))

    if not roots:
        raise NoSolutionError(
            f"(ℓ={spec.ell}, q={spec.q}) 에 대해 ν ∈ [0, {nu_max:.6f}) 범위에 해가 없습니다",
            bracket=(0.0, nu_max),
        )
    solutions = [_params_at(nu, spec) for nu in sorted(set(roots))]
    logger.info(f"링 해 탐색 완료: ℓ={spec.ell}, q={spec.q}, ν={[round(p.nu, 12) for p in solutions]}")
    return solutions


def solve_ring(spec: RingSpec, nu_hint: Optional[float] = None) -> CnoidalParams:
    """해 하나 (nu_hint 에 가장 가까운 가지, 기본은 가장 작은 ν)"""
    solutions = solve_ring_branches(spec)
    if nu_hint is None:
        return solutions[0]
    return min(solutions, key=lambda p: abs(p.nu - nu_hint))


def matching_residuals(spec: RingSpec, params: CnoidalParams) -> Tuple[float, float, float]:
    """닫힌 계의 세 잔차: 주기, 평균 밀도, 감김"""
    K = float(ellint_K(params.nu))
    E = float(ellint_E_complete(params.nu))
    delta = params.delta
    r_period = spec.L - 2.0 * K * spec.ell / math.sqrt(delta)
    r_density = spec.nbar - (params.n1 + delta * (1.0 - E / K))
    r_winding = spec.pbar / spec.nbar + params.w_n - params.J / spec.nbar - TWO_PI * spec.q / spec.L
    return r_period / spec.L, r_density / spec.nbar, r_winding


# ============== 파동함수 ==============
def density(params: CnoidalParams, x) -> np.ndarray:
    """n(x) = n1 + (n2 − n1) sn²(√(n3−n1) x, ν)"""
    x = np.asarray(x, dtype=float)
    if params.nu == 0.0:
        return np.full_like(x, params.n1)
    sn = np.sin(jacobi_am(params.wavenumber * x, params.nu))
    return params.n1 + (params.n2 - params.n1) * sn * sn


def cnoidal_phase(params: CnoidalParams, x) -> np.ndarray:
    """θ(x) = J/(n1√Δ) · Π(am(√Δ x), m, ν) (θ(0) = 0)"""
    x = np.asarray(x, dtype=float)
    if params.nu == 0.0:
        return params.w_n * x
    am = jacobi_am(params.wavenumber * x, params.nu)
    return params.J / (params.n1 * params.wavenumber) * ellint_Pi(am, params.m, params.nu)


def cnoidal_field(params: CnoidalParams, x) -> np.ndarray:
    """v 를 뺀 정지 cnoidal 파 √n e^{iθ}"""
    return np.sqrt(density(params, x)) * np.exp(1j * cnoidal_phase(params, x))


def wavefunction(params: CnoidalParams, x) -> np.ndarray:
    """Ψ₀(x) = e^{ivx} √n(x) e^{iθ(x)}"""
    x = np.asarray(x, dtype=float)
    return np.exp(1j * params.v * x) * cnoidal_field(params, x)


def wavefunction_derivative(params: CnoidalParams, x) -> np.ndarray:
    """해석적 ∂ₓΨ₀ = [n'/(2n) + i(v + J/n)] Ψ₀"""
    x = np.asarray(x, dtype=float)
    psi = wavefunction(params, x)
    n = density(params, x)
    if params.nu == 0.0:
        dn = np.zeros_like(x)
    else:
        sn, cn, dn_ = jacobi_sncndn(params.wavenumber * x, params.nu)
        dn = 2.0 * (params.n2 - params.n1) * params.wavenumber * sn * cn * dn_
    return (0.5 * dn / n + 1j * (params.v + params.J / n)) * psi


# ============== 보존량 ==============
def _density_moments(params: CnoidalParams) -> Tuple[float, float]:
    """셀 평균 ⟨n⟩, ⟨n²⟩ (F_2, F_4 적분 이용)"""
    if params.nu == 0.0:
        return params.n1, params.n1 ** 2
    (F0, _), (F2, _), (F4, _) = fg_integrals(2, params.nu)
    jump = params.n2 - params.n1
    mean_n = params.n1 + jump * F2 / F0
    mean_n2 = params.n1 ** 2 + 2.0 * params.n1 * jump * F2 / F0 + jump ** 2 * F4 / F0
    return mean_n, mean_n2


def energy_density(params: CnoidalParams, closed_form: bool = False) -> float:
    """
    평균 에너지 밀도 e = μ n̄ + v p̄ − ½⟨n²⟩

    closed_form=True 면 K, E 만 쓰는 닫힌 식
    e = μn̄ + vp̄ + n1²/2 − n1 n̄ − (Δ²/6)[(ν+2) − 2(ν+1)E/K]
    """
    nbar, mean_n2 = _density_moments(params)
    pbar = nbar * params.v + params.J
    if not closed_form or params.nu == 0.0:
        return params.mu * nbar + params.v * pbar - 0.5 * mean_n2
    nu, delta = params.nu, params.delta
    ratio = params.E / params.K
    nbar_closed = params.n1 + delta * (1.0 - ratio)
    return (
        params.mu * nbar_closed + params.v * (nbar_closed * params.v + params.J)
        + 0.5 * params.n1 ** 2 - params.n1 * nbar_closed
        - (delta ** 2 / 6.0) * ((nu + 2.0) - 2.0 * (nu + 1.0) * ratio)
    )


def charges(params: CnoidalParams) -> Tuple[float, float, float]:
    """(N, P, E): N = L⟨n⟩, P = Nv + JL, E = eL"""
    nbar, _ = _density_moments(params)
    N = nbar * params.L
    P = N * params.v + params.J * params.L
    E = energy_density(params) * params.L
    return N, P, E


# ============== 열역학 미분 ==============
@dataclass(frozen=True)
class ThermoDerivatives:
    mu_num: float
    v_num: float
    mu: float
    v: float
    hessian: np.ndarray
    multiplier_jacobian: np.ndarray

    @property
    def mu_error(self) -> float:
        return abs(self.mu_num - self.mu) / max(abs(self.mu), abs(self.v))

    @property
    def v_error(self) -> float:
        return abs(self.v_num - self.v) / max(abs(self.v), abs(self.mu))

    @property
    def asymmetry(self) -> float:
        """|∂_P μ − ∂_N v|"""
        return float(abs(self.multiplier_jacobian[0, 1] - self.multiplier_jacobian[1, 0]))

    @property
    def is_positive_definite(self) -> bool:
        symmetric = 0.5 * (self.hessian + self.hessian.T)
        return bool(np.all(np.linalg.eigvalsh(symmetric) > 0.0))


def track_branch(spec: RingSpec, nu_ref: float) -> CnoidalParams:
    """nu_ref 에 가장 가까운 가지; |Δν| 가 branch_jump_tol 을 넘으면 BranchJumpError"""
    params = solve_ring(spec, nu_hint=nu_ref)
    if abs(params.nu - nu_ref) > settings.branch_jump_tol:
        raise BranchJumpError(f"스텐실 점에서 가지가 바뀌었습니다: ν {nu_ref:.6f} → {params.nu:.6f}")
    return params


def default_steps(spec: RingSpec, h_rel: float = settings.thermo_step_rel) -> Tuple[float, float]:
    """h_N = h·N, h_P = h·max(|P|, N/L)"""
    return h_rel * spec.N, h_rel * max(abs(spec.P), spec.N / spec.L)


def thermo_derivatives(
    spec: RingSpec,
    h: Optional[Tuple[float, float]] = None,
    nu_hint: Optional[float] = None,
    check: bool = True,
) -> ThermoDerivatives:
    """
    고정 L 에서 E(N, P) 의 중심 유한 차분

    Returns:
        ∂_N E, ∂_P E, 2×2 헤시안, 그리고 (μ, v) 의 (N, P) 야코비안
    """
    base = solve_ring(spec, nu_hint=nu_hint)
    hN, hP = default_steps(spec) if h is None else h
    N0, P0 = spec.N, spec.P

    cache: Dict[Tuple[int, int], CnoidalParams] = {(0, 0): base}

    def at(i: int, j: int) -> CnoidalParams:
        if (i, j) not in cache:
            cache[(i, j)] = track_branch(spec.with_charges(N0 + i * hN, P0 + j * hP), base.nu)
        return cache[(i, j)]

    def energy(i: int, j: int) -> float:
        return charges(at(i, j))[2]

    E0 = energy(0, 0)
    mu_num = (energy(1, 0) - energy(-1, 0)) / (2.0 * hN)
    v_num = (energy(0, 1) - energy(0, -1)) / (2.0 * hP)
    E_NN = (energy(1, 0) - 2.0 * E0 + energy(-1, 0)) / hN ** 2
    E_PP = (energy(0, 1) - 2.0 * E0 + energy(0, -1)) / hP ** 2
    E_NP = (energy(1, 1) - energy(1, -1) - energy(-1, 1) + energy(-1, -1)) / (4.0 * hN * hP)
    hessian = np.array([[E_NN, E_NP], [E_NP, E_PP]])

    jacobian = np.array([
        [(at(1, 0).mu - at(-1, 0).mu) / (2.0 * hN), (at(0, 1).mu - at(0, -1).mu) / (2.0 * hP)],
        [(at(1, 0).v - at(-1, 0).v) / (2.0 * hN), (at(0, 1).v - at(0, -1).v) / (2.0 * hP)],
    ])
    result = ThermoDerivatives(mu_num, v_num, base.mu, base.v, hessian, jacobian)

    logger.info(
        f"열역학 미분: ∂E/∂N={mu_num:.10f} (μ={base.mu:.10f}), ∂E/∂P={v_num:.10f} (v={base.v:.10f}), "
        f"비대칭={result.asymmetry:.2e}"
    )
    if check and max(result.mu_error, result.v_error) > settings.thermo_tol:
        raise ConsistencyError(
            f"∂E/∂N, ∂E/∂P 가 승수와 맞지 않습니다: μ 오차={result.mu_error:.2e}, v 오차={result.v_error:.2e}"
        )
    return result


def gibbs_duhem_check(spec: RingSpec, h: Optional[Tuple[float, float]] = None, nu_hint: Optional[float] = None) -> Tuple[float, float]:
    """
    ∂_A ∫p dx = N ∂_A μ + P ∂_A v (p = n²/2, A = N, P) 의 상대 잔차
    """
    base = solve_ring(spec, nu_hint=nu_hint)
    hN, hP = default_steps(spec) if h is None else h
    N0, P0 = spec.N, spec.P

    def pressure_and_multipliers(N: float, P: float) -> Tuple[float, float, float]:
        params = track_branch(spec.with_charges(N, P), base.nu)
        _, mean_n2 = _density_moments(params)
        return 0.5 * mean_n2 * spec.L, params.mu, params.v

    residuals = []
    for dN, dP, step in ((hN, 0.0, hN), (0.0, hP, hP)):
        p_plus, mu_plus, v_plus = pressure_and_multipliers(N0 + dN, P0 + dP)
        p_minus, mu_minus, v_minus = pressure_and_multipliers(N0 - dN, P0 - dP)
        lhs = (p_plus - p_minus) / (2.0 * step)
        rhs = N0 * (mu_plus - mu_minus) / (2.0 * step) + P0 * (v_plus - v_minus) / (2.0 * step)
        residuals.append(abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return residuals[0], residuals[1]
