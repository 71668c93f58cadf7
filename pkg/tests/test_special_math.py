from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

from app.core.exceptions import EllipticDomainError
from app.services.special_math_service import (
    ellint_E,
    ellint_E_complete,
    ellint_F,
    ellint_K,
    ellint_Pi,
    ellint_Pi_complete,
    fg_integrals,
    jacobi_am,
    jacobi_cn,
    jacobi_dn,
    jacobi_sn,
    pendulum_energy,
    pendulum_period,
    pendulum_state,
    pendulum_theta,
)


def _quad(integrand, a, b):
    value, _ = quad(integrand, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
    return value


def _first_kind(phi, nu):
    return _quad(lambda t: 1.0 / np.sqrt(1.0 - nu * np.sin(t) ** 2), 0.0, phi)


def _second_kind(phi, nu):
    return _quad(lambda t: np.sqrt(1.0 - nu * np.sin(t) ** 2), 0.0, phi)


def _third_kind(phi, m, nu):
    return _quad(lambda t: 1.0 / ((1.0 - m * np.sin(t) ** 2) * np.sqrt(1.0 - nu * np.sin(t) ** 2)), 0.0, phi)


# ============== 타원 적분 ==============
def test_incomplete_first_kind_known_values():
    assert ellint_F(np.pi / 2, 0.0) == pytest.approx(np.pi / 2, abs=1e-15)
    assert ellint_F(0.0, 0.7) == 0.0
    assert ellint_F(0.9, 0.0) == pytest.approx(0.9, abs=1e-15)


@pytest.mark.parametrize("phi, nu", [(1.0, 0.5), (0.3, 0.99), (2.5, 0.6), (-4.0, 0.3), (7.0, 0.9)])
def test_incomplete_first_kind_matches_quadrature(phi, nu):
    assert ellint_F(phi, nu) == pytest.approx(_first_kind(phi, nu), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("phi, nu", [(0.8, 0.3), (2.2, 0.7), (-3.5, 0.95), (1.2, 1.0)])
def test_incomplete_second_kind_matches_quadrature(phi, nu):
    assert ellint_E(phi, nu) == pytest.approx(_second_kind(phi, nu), rel=1e-12, abs=1e-14)


def test_complete_integrals():
    assert ellint_K(0.0) == pytest.approx(np.pi / 2, abs=1e-15)
    assert ellint_K(0.5) == pytest.approx(_first_kind(np.pi / 2, 0.5), abs=1e-12)
    assert ellint_E_complete(0.0) == pytest.approx(np.pi / 2, abs=1e-15)
    assert ellint_E_complete(1.0) == pytest.approx(1.0, abs=1e-15)
    assert ellint_E_complete(0.8) == pytest.approx(_second_kind(np.pi / 2, 0.8), abs=1e-12)


def test_complete_first_kind_diverges_at_one():
    with pytest.raises(EllipticDomainError):
        ellint_K(1.0)


@pytest.mark.parametrize("nu", [-0.1, 1.2, np.nan])
def test_parameter_outside_domain_is_rejected(nu):
    with pytest.raises(EllipticDomainError):
        ellint_F(0.5, nu)


def test_incomplete_first_kind_diverges_past_quarter_period_at_one():
    with pytest.raises(EllipticDomainError):
        ellint_F(np.pi / 2, 1.0)


def test_third_kind_reduces_to_first_kind():
    assert ellint_Pi(np.pi / 2, 0.0, 0.4) == pytest.approx(ellint_K(0.4), abs=1e-14)
    assert ellint_Pi(0.0, -0.5, 0.4) == 0.0


@pytest.mark.parametrize(
    "phi, m, nu",
    [(np.pi / 2, -0.5, 0.4), (1.1, -3.0, 0.2), (2.7, 0.9, 0.5), (-2.0, 0.5, 0.8), (5.0, -1.5, 0.3), (1.3, 0.6, 1.0)],
)
def test_third_kind_matches_quadrature(phi, m, nu):
    assert ellint_Pi(phi, m, nu) == pytest.approx(_third_kind(phi, m, nu), rel=1e-12, abs=1e-12)


def test_complete_third_kind_matches_quadrature():
    for m in (-3.0, -0.5, 0.0, 0.5, 0.9):
        assert ellint_Pi_complete(m, 0.5) == pytest.approx(_third_kind(np.pi / 2, m, 0.5), rel=1e-12)


def test_third_kind_characteristic_must_be_below_one():
    with pytest.raises(EllipticDomainError):
        ellint_Pi(0.5, 1.0, 0.5)


# ============== Jacobi 함수 ==============
def test_amplitude_inverts_first_kind():
    nu = 0.6
    assert jacobi_am(ellint_K(nu), nu) == pytest.approx(np.pi / 2, abs=1e-14)
    u = np.linspace(-20.0, 20.0, 81)
    np.testing.assert_allclose(ellint_F(jacobi_am(u, nu), nu), u, atol=1e-12)


def test_amplitude_matches_root_finding_oracle():
    nu = 0.6
    oracle = brentq(lambda phi: _first_kind(phi, nu) - 0.9, 0.0, 2.0, xtol=1e-15)
    assert jacobi_am(0.9, nu) == pytest.approx(oracle, abs=1e-12)
    assert jacobi_sn(0.7, 0.5) == pytest.approx(
        np.sin(brentq(lambda phi: _first_kind(phi, 0.5) - 0.7, 0.0, 2.0, xtol=1e-15)), abs=1e-12
    )


def test_jacobi_limits():
    assert jacobi_sn(0.7, 0.0) == pytest.approx(np.sin(0.7), abs=1e-15)
    assert jacobi_sn(0.7, 1.0) == pytest.approx(np.tanh(0.7), abs=1e-15)
    assert jacobi_dn(0.7, 1.0) == pytest.approx(1.0 / np.cosh(0.7), abs=1e-15)


def test_amplitude_derivative_is_dn():
    nu, h = 0.45, 1e-5
    u = np.linspace(-6.0, 6.0, 25)
    slope = (jacobi_am(u + h, nu) - jacobi_am(u - h, nu)) / (2.0 * h)
    np.testing.assert_allclose(slope, jacobi_dn(u, nu), atol=1e-8)


def test_jacobi_identities():
    u = np.linspace(-10.0, 10.0, 101)
    nu = 0.8
    sn, cn, dn = jacobi_sn(u, nu), jacobi_cn(u, nu), jacobi_dn(u, nu)
    np.testing.assert_allclose(sn ** 2 + cn ** 2, 1.0, atol=1e-14)
    np.testing.assert_allclose(dn ** 2 + nu * sn ** 2, 1.0, atol=1e-14)


# ============== F_{2n}, G_{2n} ==============
def test_fg_integrals_start_from_complete_integrals():
    (F0, G0), (F2, G2), (F4, G4) = fg_integrals(2, 0.5)
    assert F0 == pytest.approx(ellint_K(0.5), abs=1e-15)
    assert G0 == pytest.approx(ellint_E_complete(0.5), abs=1e-15)
    assert F2 == pytest.approx((ellint_K(0.5) - ellint_E_complete(0.5)) / 0.5, abs=1e-14)
    assert G2 == pytest.approx(_quad(lambda t: np.sin(t) ** 2 * np.sqrt(1 - 0.5 * np.sin(t) ** 2), 0, np.pi / 2), abs=1e-12)
    assert F4 == pytest.approx(_quad(lambda t: np.sin(t) ** 4 / np.sqrt(1 - 0.5 * np.sin(t) ** 2), 0, np.pi / 2), abs=1e-12)
    assert G4 == pytest.approx(_quad(lambda t: np.sin(t) ** 4 * np.sqrt(1 - 0.5 * np.sin(t) ** 2), 0, np.pi / 2), abs=1e-12)


def test_fg_integrals_reject_zero_parameter():
    with pytest.raises(EllipticDomainError):
        fg_integrals(2, 0.0)


# ============== 진자 ==============
def _pendulum_rhs(t, y):
    return [y[1], -np.sin(y[0])]


@pytest.mark.parametrize("nu", [0.3, 0.9, 1.7])
def test_pendulum_matches_direct_integration(nu):
    energy = 2.0 * nu
    period = pendulum_period(energy, 1.0)
    theta0, theta_dot0 = pendulum_state(0.0, energy, 1.0)
    times = np.linspace(0.0, 10.0 * period, 2001)
    solution = solve_ivp(
        _pendulum_rhs, (0.0, times[-1]), [float(theta0), float(theta_dot0)],
        method="DOP853", t_eval=times, rtol=1e-13, atol=1e-13,
    )
    theta, _ = pendulum_state(times, energy, 1.0)
    assert np.max(np.abs(theta - solution.y[0])) < 1e-6


@pytest.mark.parametrize("nu", [0.3, 0.9])
def test_libration_period_matches_quadrature(nu):
    energy = 2.0 * nu
    theta_max = 2.0 * np.arcsin(np.sqrt(nu))
    quarter = _quad(lambda th: 1.0 / np.sqrt(max(2.0 * (energy - 2.0 * np.sin(0.5 * th) ** 2), 1e-300)), 0.0, theta_max)
    assert pendulum_period(energy, 1.0) == pytest.approx(4.0 * quarter, rel=1e-7)


def test_rotation_period_matches_quadrature():
    energy = 3.4
    full = _quad(lambda th: 1.0 / np.sqrt(2.0 * (energy - 2.0 * np.sin(0.5 * th) ** 2)), 0.0, 2.0 * np.pi)
    assert pendulum_period(energy, 1.0) == pytest.approx(full, rel=1e-10)


@pytest.mark.parametrize("nu", [0.3, 1.0, 1.7])
def test_pendulum_conserves_energy(nu):
    energy = 2.0 * nu
    t = np.linspace(-8.0, 8.0, 161)
    theta, theta_dot = pendulum_state(t, energy, 1.0)
    np.testing.assert_allclose(pendulum_energy(theta, theta_dot, 1.0), energy, rtol=1e-12)


def test_libration_starts_at_rest_angle():
    theta, _ = pendulum_state(2.5, 0.6, 1.0, t0=2.5)
    assert theta == pytest.approx(0.0, abs=1e-15)


def test_separatrix_period_is_infinite():
    assert pendulum_period(2.0, 1.0) == float("inf")


def test_libration_angle_repeats_after_one_period():
    t = np.linspace(0.0, 5.0, 21)
    period = pendulum_period(0.6, 1.0)
    np.testing.assert_allclose(pendulum_theta(t + period, 0.6, 1.0), pendulum_theta(t, 0.6, 1.0), atol=1e-10)
    np.testing.assert_array_equal(pendulum_theta(t, 0.6, 1.0), pendulum_state(t, 0.6, 1.0)[0])


@pytest.mark.parametrize("nu", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_sn_has_period_four_k(nu):
    u = np.linspace(-3.0, 3.0, 31)
    np.testing.assert_allclose(jacobi_sn(u + 4.0 * ellint_K(nu), nu), jacobi_sn(u, nu), atol=1e-9)
