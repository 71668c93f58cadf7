from __future__ import annotations

import numpy as np
import pytest

from app.core.exceptions import GridMismatchError
from app.services.modes_service import cnoidal_background
from app.services.spectral_service import (
    FieldState,
    Grid1D,
    PlaneWave,
    Potential,
    Trajectory,
    commensurate_length,
    delta_barrier,
    imaginary_time,
    observables,
    split_step,
)


def _smooth_field(grid: Grid1D, rng, modes: int = 6) -> np.ndarray:
    coefficients = np.zeros(grid.N, dtype=complex)
    coefficients[:modes] = rng.normal(size=modes) + 1j * rng.normal(size=modes)
    coefficients[-modes + 1:] = rng.normal(size=modes - 1) + 1j * rng.normal(size=modes - 1)
    return 1.0 + 0.2 * np.fft.ifft(coefficients) * grid.N / modes


# ============== 격자 ==============
def test_grid_wavenumbers_keep_positive_nyquist():
    grid = Grid1D(L=10.0, N=16)
    assert grid.k[8] == pytest.approx(np.pi * 16 / 10.0)
    assert grid.k[8] > 0
    assert grid.k[9] < 0


def test_centered_grid_contains_origin():
    grid = Grid1D.centered(20.0, 64)
    assert grid.x[grid.index_of(0.0)] == pytest.approx(0.0, abs=1e-14)
    assert grid.x[0] == pytest.approx(-10.0)


@pytest.mark.parametrize("L, N", [(10.0, 15), (-1.0, 16), (10.0, 0)])
def test_invalid_grid_is_rejected(L, N):
    with pytest.raises(ValueError):
        Grid1D(L=L, N=N)


def test_field_length_must_match_grid():
    grid = Grid1D(L=10.0, N=16)
    with pytest.raises(GridMismatchError):
        FieldState(np.ones(8), 0.0, grid)


def test_absorbing_potential_sign_is_checked():
    grid = Grid1D(L=10.0, N=16)
    with pytest.raises(ValueError):
        Potential(1j * np.ones(16), grid)


def test_commensurate_length_makes_plane_wave_periodic():
    L = commensurate_length(0.8, 400.0)
    assert L >= 400.0
    assert (0.8 * L / (2.0 * np.pi)) == pytest.approx(round(0.8 * L / (2.0 * np.pi)), abs=1e-9)
    assert commensurate_length(0.8, L) == pytest.approx(L)


def test_delta_barrier_integrates_to_strength():
    grid = Grid1D.centered(100.0, 1024)
    barrier = delta_barrier(grid, 0.7)
    assert np.sum(barrier.values) * grid.dx == pytest.approx(-0.7, rel=1e-12)
    assert np.argmin(barrier.values) == grid.index_of(0.0)


# ============== 관측량 ==============
def test_plane_wave_observables():
    grid = Grid1D(L=2.0 * np.pi * 5 / 0.8, N=128)
    state = FieldState(np.exp(1j * 0.8 * grid.x), 0.0, grid)
    N, P, E = observables(state, Potential.zero(grid))
    assert N == pytest.approx(grid.L, rel=1e-13)
    assert P == pytest.approx(0.8 * grid.L, rel=1e-12)
    assert E == pytest.approx(grid.L * (0.5 * 0.8 ** 2 + 0.5), rel=1e-12)


def test_empty_field_has_no_charges():
    grid = Grid1D(L=10.0, N=32)
    assert observables(FieldState(np.zeros(32), 0.0, grid), Potential.zero(grid)) == (0.0, 0.0, 0.0)


# ============== 분할 단계 전파 ==============
def test_plane_wave_is_exact():
    grid = Grid1D(L=20.0, N=64)
    wave = PlaneWave(1.0, 2.0 * np.pi * 3 / grid.L)
    state = FieldState(wave.at(grid.x, 0.0), 0.0, grid)
    final = split_step(state, Potential.zero(grid), 0.01, 1000)
    assert final.t == pytest.approx(10.0)
    np.testing.assert_allclose(final.psi, wave.at(grid.x, 10.0), atol=1e-10)


def test_plane_wave_is_exact_in_moving_frame():
    grid = Grid1D(L=20.0, N=64)
    wave = PlaneWave(1.0, 2.0 * np.pi * 2 / grid.L)
    frame = (1.0, 0.3)
    state = FieldState(wave.at(grid.x, 0.0, frame), 0.0, grid)
    final = split_step(state, Potential.zero(grid), 0.01, 500, frame=frame)
    np.testing.assert_allclose(final.psi, wave.at(grid.x, 5.0, frame), atol=1e-10)


def test_norm_is_conserved(rng):
    grid = Grid1D.centered(40.0, 128)
    state = FieldState(_smooth_field(grid, rng), 0.0, grid)
    V = delta_barrier(grid, 0.5)
    N0, _, _ = observables(state, V)
    final = split_step(state, V, 0.005, 10000)
    N1, _, _ = observables(final, V)
    assert abs(N1 - N0) / N0 < 1e-12


def test_cnoidal_wave_is_stationary_in_its_frame(cnoidal_params):
    background = cnoidal_background(cnoidal_params, 128)
    final = split_step(background.state, background.potential, 5e-4, 4000, frame=background.frame)
    assert np.max(np.abs(final.psi - background.state.psi)) < 1e-4


def test_trajectory_replay_matches_direct_run(rng):
    grid = Grid1D.centered(30.0, 64)
    V = delta_barrier(grid, 0.3)
    state = FieldState(_smooth_field(grid, rng), 0.0, grid)
    trajectory = Trajectory.start(state, V, 0.01, checkpoint_every=7)
    trajectory.extend(50)

    replay = trajectory.state_at(trajectory.time_of(23))
    direct = split_step(state, V, 0.01, 23)
    assert np.array_equal(replay.psi, direct.psi)
    assert np.array_equal(trajectory.last_state.psi, split_step(state, V, 0.01, 50).psi)


def test_trajectory_rejects_times_before_start(rng):
    grid = Grid1D(L=10.0, N=16)
    trajectory = Trajectory.start(FieldState(np.ones(16), 1.0, grid), Potential.zero(grid), 0.01)
    with pytest.raises(ValueError):
        trajectory.state_at(0.5)


def test_trajectory_sample_is_step_aligned(rng):
    grid = Grid1D(L=10.0, N=16)
    trajectory = Trajectory.start(FieldState(np.ones(16), 0.0, grid), Potential.zero(grid), 0.1, checkpoint_every=4)
    trajectory.extend(30)
    series = trajectory.sample(0.95, 2.0, stride=2)
    np.testing.assert_allclose(series.times, [1.0, 1.2, 1.4, 1.6, 1.8, 2.0])
    assert series.psi.shape == (6, 16)


# ============== 허수 시간 ==============
def test_homogeneous_ground_state():
    grid = Grid1D(L=20.0, N=64)
    state, mu = imaginary_time(FieldState(np.ones(64), 0.0, grid), Potential.zero(grid), 0.01, 1e-10)
    assert mu == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(np.abs(state.psi), 1.0, atol=1e-12)


def test_attractive_barrier_binds_density_bump():
    grid = Grid1D.centered(40.0, 256)
    V = delta_barrier(grid, 0.2)
    state, mu = imaginary_time(FieldState(np.ones(256), 0.0, grid), V, 0.01, 1e-7, N_target=grid.L)
    assert mu < 1.0
    density = np.abs(state.psi) ** 2
    assert int(np.argmax(density)) == grid.index_of(0.0)
    assert np.sum(density) * grid.dx == pytest.approx(grid.L, rel=1e-6)
