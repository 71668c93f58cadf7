from __future__ import annotations

import numpy as np
import pytest

from app.core.exceptions import ConfigError
from app.models.schemas import RingSpec
from app.services.cnoidal_service import (
    charges,
    cnoidal_phase,
    density,
    energy_density,
    gibbs_duhem_check,
    matching_residuals,
    params_from_roots,
    period_for,
    ring_spec,
    roots_from_invariants,
    solve_ring,
    solve_ring_branches,
    thermo_derivatives,
    wavefunction,
)
from app.services.modes_service import cnoidal_background
from app.services.special_math_service import ellint_K
from app.services.spectral_service import gpg_residual, observables

ROOT_SETS = [
    (0.5, 0.8, 1.7, 1, 1),
    (0.3, 0.4, 1.0, 1, 1),
    (1.0, 1.5, 2.0, 1, 0),
    (0.2, 0.6, 1.1, 1, 1),
    (0.8, 0.9, 1.3, 1, 2),
    (0.4, 0.9, 1.4, 1, -1),
    (0.6, 1.2, 1.5, 1, 1),
    (0.25, 0.5, 0.75, 1, 0),
    (1.2, 1.3, 3.0, 1, 1),
    (0.7, 1.4, 1.6, 2, 1),
]


# ============== 근과 링 방정식 ==============
def test_roots_fix_parameter_and_multipliers(cnoidal_params):
    assert cnoidal_params.nu == pytest.approx(0.25, abs=1e-15)
    assert cnoidal_params.mu_v == pytest.approx(1.5, abs=1e-15)
    assert cnoidal_params.mu == pytest.approx(cnoidal_params.mu_v - 0.5 * cnoidal_params.v ** 2, abs=1e-15)
    assert cnoidal_params.L == pytest.approx(2.0 * ellint_K(0.25) / np.sqrt(1.2), rel=1e-14)


def test_ring_solve_recovers_branch(ring, cnoidal_params):
    params = solve_ring(ring, nu_hint=cnoidal_params.nu)
    assert params.nu == pytest.approx(cnoidal_params.nu, abs=1e-9)
    for got, want in ((params.n1, 0.5), (params.n2, 0.8), (params.n3, 1.7), (params.v, cnoidal_params.v)):
        assert got == pytest.approx(want, abs=1e-8)
    assert max(abs(r) for r in matching_residuals(ring, params)) < 1e-10


def test_every_branch_satisfies_matching_equations(ring):
    for params in solve_ring_branches(ring):
        assert max(abs(r) for r in matching_residuals(ring, params)) < 1e-10


def test_plane_wave_branch_has_constant_density():
    spec = RingSpec(nbar=1.0, pbar=2.0 * np.pi / 10.0, L=10.0, ell=1, q=1)
    params = solve_ring_branches(spec)[0]
    assert params.nu == 0.0
    x = np.linspace(0.0, 10.0, 11)
    np.testing.assert_allclose(density(params, x), 1.0, atol=1e-15)
    assert charges(params)[0] == pytest.approx(10.0, rel=1e-14)


def test_inverse_roots_satisfy_invariants():
    n1, n2, n3 = roots_from_invariants(0.5, 1.125, 0.2)
    assert n1 + n2 + n3 == pytest.approx(2.25, abs=1e-12)
    assert n1 * n2 * n3 == pytest.approx(0.25, abs=1e-12)
    assert (n2 - n1) / (n3 - n1) == pytest.approx(0.2, abs=1e-12)

    params = params_from_roots(n1, n2, n3, ell=1, q=0)
    branches = solve_ring_branches(ring_spec(params))
    match = min(branches, key=lambda p: abs(p.nu - 0.2))
    assert match.nu == pytest.approx(0.2, abs=1e-9)
    assert (match.n1, match.n2, match.n3) == pytest.approx((n1, n2, n3), abs=1e-8)


def test_period_grows_faster_than_complete_integral_near_one():
    ratio = period_for(0.5, 1.125, 0.9999) / period_for(0.5, 1.125, 0.9)
    assert ratio > ellint_K(0.9999) / ellint_K(0.9) * (1.0 - 1e-6)


def test_roots_must_be_ordered():
    with pytest.raises(ValueError):
        params_from_roots(0.8, 0.5, 1.7, ell=1, q=0)


@pytest.mark.parametrize("J, mu_v, nu, key", [(0.0, 1.0, 0.5, "J"), (0.5, -1.0, 0.5, "mu_v"), (0.5, 1.125, 1.0, "nu")])
def test_invalid_invariants_are_config_errors(J, mu_v, nu, key):
    with pytest.raises(ConfigError) as e:
        roots_from_invariants(J, mu_v, nu)
    assert e.value.key == key
    assert e.value.exit_code == 2


# ============== 파동함수 ==============
def test_density_extrema_and_phase_slope(cnoidal_params):
    p = cnoidal_params
    assert density(p, 0.0) == pytest.approx(p.n1, abs=1e-15)
    assert density(p, 0.5 * p.a) == pytest.approx(p.n2, abs=1e-13)
    assert cnoidal_phase(p, p.a) / p.a == pytest.approx(p.w_n, rel=1e-12)


@pytest.mark.parametrize("n1, n2, n3, ell, q", ROOT_SETS)
def test_wavefunction_solves_stationary_equation(n1, n2, n3, ell, q):
    params = params_from_roots(n1, n2, n3, ell=ell, q=q)
    background = cnoidal_background(params, 128 * ell)
    residual = gpg_residual(background.state.psi, background.potential, params.mu, params.v)
    assert residual < 1e-8


def test_wavefunction_carries_flow_phase(cnoidal_params):
    p = cnoidal_params
    x = np.linspace(0.0, p.a, 17)
    psi = wavefunction(p, x)
    np.testing.assert_allclose(np.abs(psi) ** 2, density(p, x), rtol=1e-12)
    ratio = wavefunction(p, x + p.a) / psi
    np.testing.assert_allclose(ratio, np.exp(1j * (p.v + p.w_n) * p.a), rtol=1e-10)


# ============== 보존량 ==============
def test_closed_form_energy_matches_moments(cnoidal_params):
    assert energy_density(cnoidal_params, closed_form=True) == pytest.approx(energy_density(cnoidal_params), rel=1e-12)


@pytest.mark.parametrize("n1, n2, n3, ell, q", ROOT_SETS[:4])
def test_charges_match_spectral_observables(n1, n2, n3, ell, q):
    params = params_from_roots(n1, n2, n3, ell=ell, q=q)
    background = cnoidal_background(params, 256)
    measured = observables(background.state, background.potential)
    for got, want in zip(charges(params), measured):
        assert got == pytest.approx(want, rel=1e-8, abs=1e-10)


def test_ring_spec_reproduces_charges(cnoidal_params, ring):
    N, P, _ = charges(cnoidal_params)
    assert ring.N == pytest.approx(N, rel=1e-14)
    assert ring.P == pytest.approx(P, rel=1e-14)
    assert ring.L == cnoidal_params.L


# ============== 열역학 ==============
def test_energy_derivatives_recover_multipliers(ring, cnoidal_params):
    thermo = thermo_derivatives(ring, nu_hint=cnoidal_params.nu)
    assert thermo.mu_error < 1e-4
    assert thermo.v_error < 1e-4
    assert thermo.asymmetry < 1e-6
    np.testing.assert_allclose(thermo.hessian, thermo.hessian.T)


def test_gibbs_duhem_relation(ring, cnoidal_params):
    residual_N, residual_P = gibbs_duhem_check(ring, nu_hint=cnoidal_params.nu)
    assert residual_N < 1e-4
    assert residual_P < 1e-4


def test_susceptibility_of_ring_solution_is_indefinite(ring, cnoidal_params):
    thermo = thermo_derivatives(ring, nu_hint=cnoidal_params.nu)
    assert not thermo.is_positive_definite
    assert abs(thermo.hessian[0, 1]) > 1e-6
    eigenvalues = np.linalg.eigvalsh(thermo.hessian)
    assert eigenvalues[0] < 0.0 < eigenvalues[1]
