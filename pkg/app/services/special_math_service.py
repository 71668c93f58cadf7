"""타원 적분, Jacobi 타원 함수, 보조 적분 F/G, 진자 해석해"""
from __future__ import annotations

import logging
from typing import List, Tuple

import numpy as np
from scipy import special

from app.core.exceptions import EllipticDomainError

logger = logging.getLogger(__name__)

HALF_PI = 0.5 * np.pi


# ============== 정의역 검사 ==============
def _check_nu(nu, allow_one: bool = True) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    upper_ok = (nu <= 1.0) if allow_one else (nu < 1.0)
    if np.any(~np.isfinite(nu)) or np.any(nu < 0.0) or np.any(~upper_ok):
        domain = "[0,1]" if allow_one else "[0,1)"
        raise EllipticDomainError(f"타원 매개변수 ν 는 {domain} 범위여야 합니다: nu={nu}")
    return nu


def _check_characteristic(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if np.any(~np.isfinite(m)) or np.any(m >= 1.0):
        raise EllipticDomainError(f"특성값 m 은 1 미만이어야 합니다: m={m}")
    return m


def _reduce_amplitude(phi) -> Tuple[np.ndarray, np.ndarray]:
    """phi = jπ + r, |r| ≤ π/2 로 분해"""
    phi = np.asarray(phi, dtype=float)
    j = np.round(phi / np.pi)
    return j, phi - j * np.pi


def _check_divergent_amplitude(phi, nu) -> None:
    # ν=1 에서는 |φ| ≥ π/2 에서 적분이 발산
    if np.any((nu == 1.0) & (np.abs(np.asarray(phi, dtype=float)) >= HALF_PI)):
        raise EllipticDomainError(f"ν=1 에서는 |φ| < π/2 이어야 합니다: phi={phi}")


# ============== 타원 적분 ==============
def ellint_K(nu):
    """제1종 완전 타원 적분 K(ν), ν ∈ [0,1)"""
    nu = _check_nu(nu, allow_one=False)
    return special.ellipk(nu)


def ellint_E_complete(nu):
    """제2종 완전 타원 적분 E(ν), ν ∈ [0,1]"""
    nu = _check_nu(nu)
    return special.ellipe(nu)


def ellint_F(phi, nu):
    """
    제1종 불완전 타원 적분 F(φ, ν)

    φ 를 π 단위로 축약한 뒤 |r| ≤ π/2 구간만 scipy 로 계산한다.
    """
    nu = _check_nu(nu)
    _check_divergent_amplitude(phi, nu)
    j, r = _reduce_amplitude(phi)
    if np.all(j == 0):
        return special.ellipkinc(r, nu)
    # ν=1 인 성분은 j=0 이 보장됨
    complete = special.ellipk(np.where(nu == 1.0, 0.0, nu))
    return 2.0 * j * complete + special.ellipkinc(r, nu)


def ellint_E(phi, nu):
    """제2종 불완전 타원 적분 E(φ, ν)"""
    nu = _check_nu(nu)
    j, r = _reduce_amplitude(phi)
    return 2.0 * j * special.ellipe(nu) + special.ellipeinc(r, nu)


def _pi_reduced(r, m, nu):
    # Carlson 대칭형: |r| ≤ π/2
    s = np.sin(r)
    c2 = np.cos(r) ** 2
    s2 = s * s
    delta2 = 1.0 - nu * s2
    return s * special.elliprf(c2, delta2, 1.0) + (m / 3.0) * s * s2 * special.elliprj(
        c2, delta2, 1.0, 1.0 - m * s2
    )


def _pi_complete(m, nu):
    return special.elliprf(0.0, 1.0 - nu, 1.0) + (m / 3.0) * special.elliprj(0.0, 1.0 - nu, 1.0, 1.0 - m)


def ellint_Pi_complete(m, nu):
    """제3종 완전 타원 적분 Π(m, ν)"""
    m = _check_characteristic(m)
    nu = _check_nu(nu, allow_one=False)
    return _pi_complete(m, nu)


def ellint_Pi(phi, m, nu):
    """제3종 불완전 타원 적분 Π(φ, m, ν) = ∫dφ/[(1−m sin²φ)√(1−ν sin²φ)]"""
    m = _check_characteristic(m)
    nu = _check_nu(nu)
    _check_divergent_amplitude(phi, nu)
    j, r = _reduce_amplitude(phi)
    reduced = _pi_reduced(r, m, nu)
    if np.all(j == 0):
        return reduced
    return 2.0 * j * _pi_complete(m, np.where(nu == 1.0, 0.0, nu)) + reduced


# ============== Jacobi 타원 함수 ==============
def jacobi_am(u, nu):
    """
    Jacobi 진폭 am(u, ν): F(am(u,ν), ν) = u 의 역함수

    u = 2jK + r (|r| ≤ K) 로 축약하여 큰 |u| 에서도 정밀도를 유지한다.
    """
    nu = _check_nu(nu)
    u = np.asarray(u, dtype=float)
    if np.all(nu == 0.0):
        return u + 0.0 * nu
    if np.all(nu == 1.0):
        return _gudermannian(u)
    if np.any(nu == 1.0):
        regular = _am_regular(u, np.where(nu == 1.0, 0.5, nu))
        return np.where(nu == 1.0, _gudermannian(u), regular)
    return _am_regular(u, nu)


def _gudermannian(u):
    # am(u,1)
    return 2.0 * np.arctan(np.tanh(0.5 * u))


def _am_regular(u, nu):
    K = special.ellipk(nu)
    j = np.round(u / (2.0 * K))
    r = u - 2.0 * j * K
    _, _, _, ph = special.ellipj(r, nu)
    return j * np.pi + ph


def jacobi_sncndn(u, nu) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """sn, cn, dn 을 한 번의 진폭 계산으로 반환"""
    am = jacobi_am(u, nu)
    sn = np.sin(am)
    cn = np.cos(am)
    dn = np.sqrt(1.0 - np.asarray(nu, dtype=float) * sn * sn)
    return sn, cn, dn


def jacobi_sn(u, nu):
    return np.sin(jacobi_am(u, nu))


def jacobi_cn(u, nu):
    return np.cos(jacobi_am(u, nu))


def jacobi_dn(u, nu):
    return jacobi_sncndn(u, nu)[2]


# ============== 보조 적분 F_{2n}, G_{2n} ==============
def fg_integrals(n_max: int, nu: float) -> List[Tuple[float, float]]:
    """
    F_{2n}(ν)=∫sin^{2n}φ/√(1−ν sin²φ), G_{2n}(ν)=∫sin^{2n}φ √(1−ν sin²φ) (0..π/2)

    F_0=K, G_0=E 에서 시작하는 상호 점화식:
        F_{2n} = (F_{2n−2} − G_{2n−2}) / ν
        G_{2n} = ((2n−1) G_{2n−2} + (1−ν) F_{2n}) / (2n+1)
    """
    if n_max < 0:
        raise ValueError(f"n_max 는 0 이상이어야 합니다: {n_max}")
    nu = float(_check_nu(nu, allow_one=False))
    if nu == 0.0:
        raise EllipticDomainError("fg_integrals 점화식은 ν=0 에서 정의되지 않습니다 (ν 로 나눔)")

    f_prev = float(special.ellipk(nu))
    g_prev = float(special.ellipe(nu))
    result = [(f_prev, g_prev)]
    for n in range(1, n_max + 1):
        f_next = (f_prev - g_prev) / nu
        g_next = ((2 * n - 1) * g_prev + (1.0 - nu) * f_next) / (2 * n + 1)
        result.append((f_next, g_next))
        f_prev, g_prev = f_next, g_next
    return result


# ============== 진자 해석해 ==============
def pendulum_parameter(energy_e: float, g_over_L: float) -> float:
    """ν = e L / 2g (ν ≤ 1 진동, ν > 1 회전)"""
    if energy_e < 0:
        raise ValueError(f"에너지 e 는 0 이상이어야 합니다: {energy_e}")
    if g_over_L <= 0:
        raise ValueError(f"g/L 은 양수여야 합니다: {g_over_L}")
    return energy_e / (2.0 * g_over_L)


def pendulum_state(t, energy_e: float, g_over_L: float, t0: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """진자 각도 θ(t) 와 각속도 θ̇(t)"""
    nu = pendulum_parameter(energy_e, g_over_L)
    tau = np.asarray(t, dtype=float) - t0
    if nu <= 1.0:
        omega0 = np.sqrt(g_over_L)
        if nu == 1.0:
            # 분리선: θ = 2 arcsin(tanh ω₀τ)
            sn, cn = np.tanh(omega0 * tau), 1.0 / np.cosh(omega0 * tau)
        else:
            sn, cn, _ = jacobi_sncndn(omega0 * tau, nu)
        theta = 2.0 * np.arcsin(np.sqrt(nu) * sn)
        theta_dot = 2.0 * np.sqrt(nu) * omega0 * cn
        return theta, theta_dot

    rate = np.sqrt(0.5 * energy_e)
    am = jacobi_am(rate * tau, 1.0 / nu)
    theta = 2.0 * am
    theta_dot = 2.0 * rate * np.sqrt(1.0 - np.sin(am) ** 2 / nu)
    return theta, theta_dot


def pendulum_theta(t, energy_e: float, g_over_L: float, t0: float = 0.0):
    """진자 각도 θ(t)"""
    return pendulum_state(t, energy_e, g_over_L, t0)[0]


def pendulum_period(energy_e: float, g_over_L: float) -> float:
    """진동: T = 4√(L/g) K(ν), 회전: T = √(8/e) K(1/ν)"""
    nu = pendulum_parameter(energy_e, g_over_L)
    if nu < 1.0:
        return float(4.0 * ellint_K(nu) / np.sqrt(g_over_L))
    if nu == 1.0:
        return float("inf")
    return float(np.sqrt(8.0 / energy_e) * ellint_K(1.0 / nu))


def pendulum_energy(theta, theta_dot, g_over_L: float):
    """(1/2)θ̇² + 2(g/L) sin²(θ/2)"""
    return 0.5 * np.asarray(theta_dot) ** 2 + 2.0 * g_over_L * np.sin(0.5 * np.asarray(theta)) ** 2
