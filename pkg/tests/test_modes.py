from __future__ import annotations

import numpy as np
import pytest

from app.core.exceptions import ConsistencyError
from app.services.cnoidal_service import params_from_roots, ring_spec, thermo_derivatives
from app.services.modes_service import (
    BdGOperator,
    BdGSpinor,
    ballistic_gibbs_mode,
    berry_gibbs_curvature,
    bogoliubov_spectrum,
    build_M0,
    cnoidal_background,
    expected_goldstone_gibbs_gram,
    floquet_propagate,
    fng_monodromy,
    gibbs_source_check,
    goldstone_gibbs_modes,
    homogeneous_dispersion,
    hybrid_goldstone_gibbs_modes,
    near_zero_subspace,
    phase_mode,
    pseudo_hermiticity_error,
    symplectic_product,
    tangent_propagate,
)
from app.services.spectral_service import FieldState, Grid1D, Potential, SplitStepper, Trajectory


def _smooth(grid: Grid1D, rng, modes: int = 5) -> np.ndarray:
    coefficients = np.zeros(grid.N, dtype=complex)
    coefficients[:modes] = rng.normal(size=modes) + 1j * rng.normal(size=modes)
    coefficients[-modes + 1:] = rng.normal(size=modes - 1) + 1j * rng.normal(size=modes - 1)
    return np.fft.ifft(coefficients) * grid.N / modes


def _random_spinor(grid: Grid1D, rng) -> BdGSpinor:
    return BdGSpinor(_smooth(grid, rng), _smooth(grid, rng), grid)


@pytest.fixture
def homogeneous():
    grid = Grid1D(L=20.0, N=64)
    return grid, BdGOperator(np.ones(grid.N), Potential.zero(grid), mu=1.0)


@pytest.fixture(scope="module")
def gg_modes():
    params = params_from_roots(0.5, 0.8, 1.7, ell=1, q=1)
    return params, ring_spec(params), goldstone_gibbs_modes(ring_spec(params), N_grid=128, nu_hint=params.nu)


# ============== 균일 응축체 ==============
def test_homogeneous_spectrum_follows_bogoliubov_dispersion(homogeneous):
    grid, op = homogeneous
    spectrum = bogoliubov_spectrum(op)
    positive = np.sort([e.real for e in spectrum.eigenvalues if e.real > 1e-3])
    expected = np.sort(homogeneous_dispersion(grid.k[grid.k != 0]))
    assert len(positive) == grid.N - 1
    np.testing.assert_allclose(positive, expected, atol=1e-8)
    assert not np.any(spectrum.unstable)


def test_homogeneous_positive_branch_has_positive_norm(homogeneous):
    _, op = homogeneous
    spectrum = bogoliubov_spectrum(op)
    for i, e in enumerate(spectrum.eigenvalues):
        if e.real > 1e-3:
            assert spectrum.norm_sign[i] == 1.0
        elif e.real < -1e-3:
            assert spectrum.norm_sign[i] == -1.0


def test_phase_mode_is_annihilated(homogeneous):
    grid, op = homogeneous
    assert op.apply(phase_mode(np.ones(grid.N), grid)).norm() < 1e-12


def test_dense_matrix_matches_operator(homogeneous, rng):
    grid, op = homogeneous
    z = _random_spinor(grid, rng)
    np.testing.assert_allclose(op.matrix() @ z.as_vector(), op.apply(z).as_vector(), atol=1e-10)


def test_non_stationary_background_is_rejected():
    grid = Grid1D(L=20.0, N=64)
    with pytest.raises(ConsistencyError):
        build_M0(FieldState(np.ones(grid.N), 0.0, grid), Potential.zero(grid), mu=0.5)


# ============== 심플렉틱 구조 ==============
def test_operator_is_pseudo_hermitian(cnoidal_params, rng):
    op = cnoidal_background(cnoidal_params, 128).operator()
    for _ in range(3):
        z, z2 = _random_spinor(op.grid, rng), _random_spinor(op.grid, rng)
        assert pseudo_hermiticity_error(op, z, z2) < 1e-10


def test_spectrum_is_closed_under_reflection(cnoidal_params):
    spectrum = bogoliubov_spectrum(cnoidal_background(cnoidal_params, 64).operator())
    values = spectrum.eigenvalues
    for e in values[np.abs(values) > 1e-3]:
        assert np.min(np.abs(values + np.conj(e))) < 1e-8 * max(1.0, abs(e))


def test_linear_flow_preserves_symplectic_product(rng):
    grid = Grid1D(L=20.0, N=64)
    psi = np.ones(grid.N, dtype=complex) + 0.1 * _smooth(grid, rng)
    stepper = SplitStepper(grid, Potential.zero(grid), 0.01)
    z1, z2 = _random_spinor(grid, rng), _random_spinor(grid, rng)
    before = symplectic_product(z1, z2)
    after = symplectic_product(
        tangent_propagate(z1, psi, 0.0, stepper, 1.0), tangent_propagate(z2, psi, 0.0, stepper, 1.0)
    )
    assert abs(after - before) < 1e-10 * z1.norm() * z2.norm()


def test_linear_flow_rejects_absorbing_potential():
    grid = Grid1D(L=10.0, N=16)
    stepper = SplitStepper(grid, Potential(-0.1j * np.ones(grid.N), grid), 0.01)
    with pytest.raises(ValueError):
        tangent_propagate(phase_mode(np.ones(grid.N), grid), np.ones(grid.N), 0.0, stepper, 0.1)


# ============== Goldstone-Gibbs 모드 ==============
def test_goldstone_gibbs_gram_is_canonical(gg_modes):
    _, _, modes = gg_modes
    assert modes.gram_error < 2e-3
    assert modes.gram.entry("theta", "N") == pytest.approx(1j, abs=2e-3)
    assert modes.gram.entry("x", "P") == pytest.approx(1j, abs=2e-3)
    assert modes.gram.anti_hermiticity_error < 1e-10
    assert expected_goldstone_gibbs_gram()[2, 0] == -1j


def test_goldstone_modes_span_near_zero_subspace(gg_modes):
    _, _, modes = gg_modes
    spectrum = bogoliubov_spectrum(modes.background.operator())
    rank, residual = near_zero_subspace(spectrum, [modes.modes["theta"], modes.modes["x"]], tol=1e-4)
    assert rank == 2
    assert residual < 1e-3


def test_gibbs_modes_source_goldstone_modes(gg_modes):
    _, _, modes = gg_modes
    assert gibbs_source_check(modes, "N") < 1e-4
    assert gibbs_source_check(modes, "P") < 1e-4


def test_ballistic_growth_matches_linear_flow(gg_modes):
    _, _, modes = gg_modes
    background = modes.background
    stepper = SplitStepper(background.grid, background.potential, 1e-3, frame=background.frame)
    z_N = modes.modes["N"]
    propagated = tangent_propagate(z_N, background.state.psi, 0.0, stepper, 1.0)
    expected = ballistic_gibbs_mode(modes, "N", 1.0)
    assert (propagated - expected).norm() / expected.norm() < 1e-3


def test_berry_gibbs_curvature_vanishes_and_shifts_with_gauge(gg_modes):
    params, ring, _ = gg_modes
    flat = berry_gibbs_curvature(ring, N_grid=128, nu_hint=params.nu)
    shifted = berry_gibbs_curvature(ring, N_grid=128, nu_hint=params.nu, shift=0.1)
    assert abs(flat) < 2e-3
    assert abs(shifted - flat + 0.1) < 2e-3


def test_hybrid_modes_diagonalize_susceptibility(gg_modes):
    params, ring, modes = gg_modes
    thermo = thermo_derivatives(ring, nu_hint=params.nu, check=False)
    hybrid = hybrid_goldstone_gibbs_modes(modes, thermo)
    np.testing.assert_allclose(hybrid.rotation.T @ hybrid.rotation, np.eye(2), atol=1e-12)
    assert hybrid.off_diagonal < 1e-10
    np.testing.assert_allclose(hybrid.inverse_masses, np.linalg.eigvalsh(thermo.hessian), rtol=1e-10)
    assert hybrid.gram_error < 2e-3
    assert hybrid.source_check(0) < 1e-3
    assert hybrid.source_check(1) < 1e-3
    assert np.sum(hybrid.masses < 0) == 1


# ============== 한 주기 전파 ==============
def test_floquet_propagation_of_phonon_and_phase_mode(homogeneous):
    grid, op = homogeneous
    trajectory = Trajectory.start(FieldState(np.ones(grid.N, dtype=complex), 0.0, grid), Potential.zero(grid), 1e-3, frame=(1.0, 0.0))
    trajectory.extend(1000)

    z_theta = phase_mode(np.ones(grid.N), grid, t=0.0)
    assert (floquet_propagate(z_theta, trajectory, 1.0) - z_theta).norm() < 1e-10

    spectrum = bogoliubov_spectrum(op)
    lowest = spectrum.physical()[0]
    z, eps = spectrum.modes[lowest], spectrum.eigenvalues[lowest].real
    propagated = floquet_propagate(z, trajectory, 1.0, t0=0.0)
    assert (propagated - np.exp(-1j * eps) * z).norm() / z.norm() < 1e-4


def test_phase_and_temporal_modes_return_after_one_ring_period(cnoidal_params):
    # 실험실 좌표의 cnoidal 파는 Ψ₀(x − vt)e^{−iμt}, L/|v| 뒤 링 주기성으로 Ψ₀ 로 돌아옴
    background = cnoidal_background(cnoidal_params, 128)
    period = cnoidal_params.L / abs(cnoidal_params.v)
    dt = 2e-3
    trajectory = Trajectory.start(background.state, background.potential, dt)
    trajectory.extend(int(np.ceil(period / dt)) + 10)

    err_theta, err_t = fng_monodromy(trajectory, period, cnoidal_params.mu, t0=5 * dt)
    assert err_theta < 1e-3
    assert err_t < 1e-2
