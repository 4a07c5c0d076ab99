"""Signal / scheduled-observation simulation behaviour."""

import numpy as np
import pytest

from sensorsched import (
    ConfigError,
    GridMismatchError,
    NumericsError,
    ObservationModel,
    SensorSchedule,
    SignalModel,
    TimeGrid,
    empirical_increment_covariance,
    simulate_observations,
    simulate_signal,
    uniform_schedule,
)


def _static_signal(x0=1.0):
    return SignalModel(
        dim=1,
        drift=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion_sqrt=lambda t: np.zeros((1, 1)),
        initial_sampler=lambda rng: np.array([x0]),
    )


def _identity_obs(gamma2=0.04):
    return ObservationModel(
        obs_dim=1,
        g=lambda x, t: np.asarray(x, dtype=float),
        gamma=lambda t: np.array([[gamma2]]),
    )


def test_constant_path_without_noise():
    grid = TimeGrid(6.0, 30)
    path = simulate_signal(_static_signal(0.7), grid, seed=0)
    np.testing.assert_array_equal(path.states, np.full((31, 1), 0.7))


def test_signal_seed_determinism():
    grid = TimeGrid(2.0, 50)
    model = SignalModel(
        dim=1,
        drift=lambda x, t: -x,
        diffusion_sqrt=lambda t: np.array([[0.5]]),
        initial_sampler=lambda rng: rng.normal(size=1),
    )
    a = simulate_signal(model, grid, seed=42)
    b = simulate_signal(model, grid, seed=42)
    np.testing.assert_array_equal(a.states, b.states)
    c = simulate_signal(model, grid, seed=43)
    assert not np.array_equal(a.states, c.states)


def test_brownian_terminal_variance():
    # 2D driftless diffusion sigma*I: Var X_i(T) = sigma^2 T
    sigma, T = 0.8, 1.5
    grid = TimeGrid(T, 16)
    model = SignalModel(
        dim=2,
        drift=lambda x, t: np.zeros(2),
        diffusion_sqrt=lambda t: sigma * np.eye(2),
        initial_sampler=lambda rng: np.zeros(2),
    )
    finals = np.array(
        [simulate_signal(model, grid, seed=(9000 + r)).states[-1] for r in range(10_000)]
    )
    var = finals.var(axis=0, ddof=1)
    np.testing.assert_allclose(var, sigma**2 * T, rtol=0.05)


def test_blowup_names_the_time():
    grid = TimeGrid(1.0, 10)
    model = SignalModel(
        dim=1,
        drift=lambda x, t: np.array([np.inf if t > 0.45 else 0.0]),
        diffusion_sqrt=lambda t: np.zeros((1, 1)),
        initial_sampler=lambda rng: np.zeros(1),
    )
    with pytest.raises(NumericsError, match="t=0.5"):
        simulate_signal(model, grid, seed=1)


def test_zero_density_cells_give_zero_increments():
    grid = TimeGrid(4.0, 8)
    dens = np.array([0.0, 0.5, 0.0, 0.5, 0.0, 0.5, 0.0, 0.5])
    xi = SensorSchedule(grid, dens)
    path = simulate_signal(_static_signal(2.0), grid, seed=3)
    obs = simulate_observations(path, _identity_obs(), xi, seed=4)
    np.testing.assert_array_equal(obs.increments[::2], 0.0)
    assert np.all(obs.increments[1::2] != 0.0)


def test_noiseless_observations_are_exact():
    grid = TimeGrid(2.0, 20)
    xi = uniform_schedule(grid)
    model = SignalModel(
        dim=1,
        drift=lambda x, t: np.array([0.3]),
        diffusion_sqrt=lambda t: np.zeros((1, 1)),
        initial_sampler=lambda rng: np.array([1.0]),
    )
    path = simulate_signal(model, grid, seed=0)
    obs_model = ObservationModel(
        obs_dim=1,
        g=lambda x, t: np.asarray(x, dtype=float),
        gamma=lambda t: np.zeros((1, 1)),
    )
    obs = simulate_observations(path, obs_model, xi, seed=5)
    expected = path.states[:-1] * (xi.density[:, None] * grid.dt)
    np.testing.assert_allclose(obs.increments, expected, atol=1e-15)


def test_indefinite_noise_rejected():
    obs = ObservationModel(
        obs_dim=2,
        g=lambda x, t: np.zeros(2),
        gamma=lambda t: np.array([[1.0, 0.0], [0.0, -0.5]]),
    )
    with pytest.raises(ConfigError):
        obs.gamma_sqrt(0.0)


def test_observation_grid_mismatch():
    path = simulate_signal(_static_signal(), TimeGrid(2.0, 10), seed=0)
    xi = uniform_schedule(TimeGrid(2.0, 20))
    with pytest.raises(GridMismatchError):
        simulate_observations(path, _identity_obs(), xi, seed=0)


def test_noise_scales_with_gamma_sqrt():
    grid = TimeGrid(2.0, 25)
    xi = uniform_schedule(grid)
    path = simulate_signal(_static_signal(0.0), grid, seed=11)
    small = simulate_observations(path, _identity_obs(gamma2=0.01), xi, seed=12)
    big = simulate_observations(path, _identity_obs(gamma2=0.04), xi, seed=12)
    # g(x)=x vanishes on this path, so the increments are pure noise;
    # doubling Gamma^{1/2} with shared draws doubles them
    np.testing.assert_allclose(big.increments, 2.0 * small.increments, rtol=1e-12)


def test_empirical_covariance_zero_for_identical_paths():
    from sensorsched import ObservationPath

    grid = TimeGrid(1.0, 5)
    inc = np.ones((5, 1)) * 0.3
    paths = [ObservationPath(grid, inc) for _ in range(3)]
    np.testing.assert_array_equal(empirical_increment_covariance(paths), np.zeros((1, 1)))


def test_empirical_covariance_needs_two_paths():
    from sensorsched import ObservationPath

    grid = TimeGrid(1.0, 5)
    with pytest.raises(ConfigError):
        empirical_increment_covariance([ObservationPath(grid, np.zeros((5, 1)))])


def test_schedule_avoiding_noisy_times_reduces_covariance():
    # Gamma(t) ramps up over time; early-mass schedule must beat late-mass
    grid = TimeGrid(6.0, 30)
    early = np.zeros(30)
    early[:10] = 1.0
    late = np.zeros(30)
    late[-10:] = 1.0
    sched_early = SensorSchedule(grid, early / (early.sum() * grid.dt))
    sched_late = SensorSchedule(grid, late / (late.sum() * grid.dt))
    obs = ObservationModel(
        obs_dim=1,
        g=lambda x, t: np.zeros(1),
        gamma=lambda t: np.array([[0.1 + t]]),
    )
    path = simulate_signal(_static_signal(0.0), grid, seed=21)

    def cov(sched, base_seed):
        paths = [
            simulate_observations(path, obs, sched, seed=base_seed + r) for r in range(800)
        ]
        return empirical_increment_covariance(paths)[0, 0]

    assert cov(sched_early, 10_000) < cov(sched_late, 20_000)
