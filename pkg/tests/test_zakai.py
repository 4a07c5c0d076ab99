"""Grid filter: densities, normalization, KL, and the log-domain update."""

import math

import numpy as np
import pytest

from sensorsched import (
    ConfigError,
    DensityField,
    GridMismatchError,
    LogDensityField,
    NumericsError,
    ObservationModel,
    SensorSchedule,
    SignalModel,
    SpaceGrid,
    SupportError,
    TimeGrid,
    gaussian_density,
    gaussian_schedule,
    kl_divergence,
    log_zakai_step,
    moments,
    normalize,
    run_filter,
    simulate_observations,
    simulate_signal,
    trapezoid,
    uniform_schedule,
)

KL_GAUSS_HALF_VAR = 0.09657359027997264  # 0.5 * (ln 2 - 1/2)


def _static_signal(x0=1.0):
    return SignalModel(
        dim=1,
        drift=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion_sqrt=lambda t: np.zeros((1, 1)),
        initial_sampler=lambda rng: np.array([x0]),
    )


# ---------------------------------------------------------------- grids


def test_space_grid_properties():
    space = SpaceGrid(-1.0, 3.0, 9)
    assert space.dx == pytest.approx(0.5)
    np.testing.assert_allclose(space.nodes, np.linspace(-1.0, 3.0, 9))


def test_space_grid_validation():
    with pytest.raises(ConfigError):
        SpaceGrid(0.0, 0.0, 16)
    with pytest.raises(ConfigError):
        SpaceGrid(1.0, 0.0, 16)
    with pytest.raises(ConfigError):
        SpaceGrid(0.0, 1.0, 7)  # too coarse to mean anything


def test_log_density_allows_minus_inf_but_not_nan():
    space = SpaceGrid(0.0, 1.0, 8)
    vals = np.zeros(8)
    vals[0] = -np.inf  # a hard zero of the density is legitimate
    LogDensityField(space, vals)
    with pytest.raises(ConfigError):
        LogDensityField(space, np.full(8, np.nan))
    with pytest.raises(ConfigError):
        LogDensityField(space, np.full(8, np.inf))


def test_density_field_must_integrate_to_one():
    space = SpaceGrid(0.0, 1.0, 11)
    with pytest.raises(ConfigError):
        DensityField(space, np.full(11, 2.0))
    with pytest.raises(ConfigError):
        DensityField(space, np.full(11, -1.0))


# ------------------------------------------------------------- normalize


def test_normalize_flat_log_density_is_uniform():
    space = SpaceGrid(-2.0, 4.0, 25)
    q = normalize(LogDensityField(space, np.zeros(25)))
    np.testing.assert_allclose(q.values, 1.0 / 6.0, atol=1e-14)


def test_normalize_shift_invariance():
    space = SpaceGrid(-5.0, 5.0, 101)
    rng = np.random.default_rng(1)
    lv = rng.normal(size=101)
    a = normalize(LogDensityField(space, lv))
    b = normalize(LogDensityField(space, lv + 17.3))
    np.testing.assert_allclose(a.values, b.values, atol=1e-12)


def test_normalize_standard_gaussian_moments():
    space = SpaceGrid(-10.0, 10.0, 801)
    q = normalize(LogDensityField(space, -0.5 * space.nodes**2))
    mean, var = moments(q)
    assert mean == pytest.approx(0.0, abs=1e-10)
    assert var == pytest.approx(1.0, abs=1e-3)


def test_normalize_degenerate_density_is_an_error():
    space = SpaceGrid(0.0, 1.0, 8)
    with pytest.raises(NumericsError):
        normalize(LogDensityField(space, np.full(8, -np.inf)))


# ---------------------------------------------------------------- KL


def test_kl_self_is_zero():
    space = SpaceGrid(-6.0, 6.0, 301)
    q = gaussian_density(space, 0.3, 0.7)
    assert kl_divergence(q, q) == pytest.approx(0.0, abs=1e-12)


def test_kl_gaussian_closed_form():
    space = SpaceGrid(-10.0, 10.0, 2000)
    q = gaussian_density(space, 0.0, 1.0)
    q0 = gaussian_density(space, 0.0, math.sqrt(2.0))
    assert kl_divergence(q, q0) == pytest.approx(KL_GAUSS_HALF_VAR, abs=1e-4)


def test_kl_positive_for_distinct_gaussians():
    space = SpaceGrid(-8.0, 8.0, 501)
    a = gaussian_density(space, 0.0, 1.0)
    b = gaussian_density(space, 0.5, 1.0)
    assert kl_divergence(a, b) > 1e-3


def test_kl_support_violation():
    space = SpaceGrid(0.0, 1.0, 11)
    q = DensityField(space, np.full(11, 1.0))
    vals = np.zeros(11)
    vals[6:] = 2.2  # integrates to one but vanishes on the left half
    q0 = DensityField(space, vals / trapezoid(vals, space))
    with pytest.raises(SupportError):
        kl_divergence(q, q0)


def test_kl_zero_times_log_zero_convention():
    space = SpaceGrid(0.0, 1.0, 11)
    vals = np.zeros(11)
    vals[6:] = 2.2
    q = DensityField(space, vals / trapezoid(vals, space))
    q0 = DensityField(space, np.full(11, 1.0))
    # q = 0 on part of q0's support is fine in this direction
    assert np.isfinite(kl_divergence(q, q0))


# ------------------------------------------------------------- moments


def test_moments_symmetric_density():
    space = SpaceGrid(-4.0, 8.0, 241)
    q = gaussian_density(space, 2.0, 0.8)
    mean, var = moments(q)
    assert mean == pytest.approx(2.0, abs=1e-10)
    assert var == pytest.approx(0.64, abs=1e-3)


def test_moments_point_mass():
    space = SpaceGrid(0.0, 1.0, 101)
    vals = np.zeros(101)
    vals[40] = 1.0 / space.dx
    q = DensityField(space, vals)
    mean, var = moments(q)
    assert mean == pytest.approx(space.nodes[40], abs=1e-12)
    assert var <= space.dx**2


# ------------------------------------------------------- log-Zakai step


def test_step_with_constant_sensor_keeps_normalized_density():
    space = SpaceGrid(-2.0, 2.0, 41)
    logp = LogDensityField(space, -0.5 * ((space.nodes - 0.3) / 0.5) ** 2)
    obs = ObservationModel(
        obs_dim=1,
        g=lambda x, t: 0.7 * np.ones_like(np.asarray(x, dtype=float)),
        gamma=lambda t: np.array([[0.09]]),
    )
    out = log_zakai_step(logp, dz=0.31, xi_k=1.4, signal=_static_signal(), obs=obs, t=0.0, dt=0.05)
    np.testing.assert_allclose(
        normalize(out).values, normalize(logp).values, atol=1e-12
    )


def test_step_static_signal_reduces_to_likelihood_update():
    # with L = 0 the update is gamma^-2 g dz - gamma^-2 g^2 xi dt / 2, exactly
    space = SpaceGrid(-1.0, 5.0, 61)
    x = space.nodes
    logp = LogDensityField(space, -0.5 * (x - 1.0) ** 2)
    gamma2 = 0.04
    t, dt, xi_k, dz = 1.7, 0.01, 2.3, 0.0123
    obs = ObservationModel(
        obs_dim=1,
        g=lambda x, t: 1.0 / (1.0 + np.exp(-(x * t - 3.0))),
        gamma=lambda t: np.array([[gamma2]]),
    )
    out = log_zakai_step(logp, dz, xi_k, _static_signal(), obs, t, dt)
    g = obs.g(x, t)
    expected = logp.log_values + g * dz / gamma2 - 0.5 * g**2 * xi_k * dt / gamma2
    np.testing.assert_allclose(out.log_values, expected, atol=1e-14)


def test_step_rejects_advection_cfl_violation():
    space = SpaceGrid(-1.0, 1.0, 21)  # dx = 0.1
    logp = LogDensityField(space, np.zeros(21))
    fast = SignalModel(
        dim=1,
        drift=lambda x, t: np.full_like(np.asarray(x, dtype=float), 30.0),
        diffusion_sqrt=lambda t: np.zeros((1, 1)),
        initial_sampler=lambda rng: np.zeros(1),
    )
    obs = ObservationModel(obs_dim=1, g=lambda x, t: np.zeros_like(x), gamma=lambda t: np.eye(1))
    with pytest.raises(ConfigError, match="advection"):
        log_zakai_step(logp, 0.0, 1.0, fast, obs, 0.0, 0.01)


def test_step_rejects_diffusion_cfl_violation():
    space = SpaceGrid(-1.0, 1.0, 201)  # dx = 0.01
    logp = LogDensityField(space, np.zeros(201))
    diffusive = SignalModel(
        dim=1,
        drift=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion_sqrt=lambda t: np.array([[1.0]]),
        initial_sampler=lambda rng: np.zeros(1),
    )
    obs = ObservationModel(obs_dim=1, g=lambda x, t: np.zeros_like(x), gamma=lambda t: np.eye(1))
    with pytest.raises(ConfigError, match="diffusion"):
        log_zakai_step(logp, 0.0, 1.0, diffusive, obs, 0.0, 0.01)


def test_step_blowup_carries_time_stamp():
    space = SpaceGrid(-1.0, 1.0, 21)
    logp = LogDensityField(space, np.zeros(21))
    obs = ObservationModel(
        obs_dim=1,
        g=lambda x, t: np.ones_like(np.asarray(x, dtype=float)),
        gamma=lambda t: np.array([[0.25]]),
    )
    with pytest.raises(NumericsError, match="t ="):
        log_zakai_step(logp, 1e308, 1.0, _static_signal(), obs, 0.4, 0.1)


# ------------------------------------------------------------ run_filter


def _logistic_obs(gamma=0.1, offset=-3.0):
    return ObservationModel(
        obs_dim=1,
        g=lambda x, t: 1.0 / (1.0 + np.exp(-(np.asarray(x, dtype=float) * t + offset))),
        gamma=lambda t: np.array([[gamma**2]]),
    )


def test_run_filter_zero_cells_returns_prior_only():
    grid = TimeGrid(6.0, 12)
    space = SpaceGrid(-2.0, 4.0, 41)
    xi = uniform_schedule(grid)
    signal = _static_signal()
    path = simulate_signal(signal, grid, seed=0)
    obs = _logistic_obs()
    obs_path = simulate_observations(path, obs, xi, seed=1)
    prior = gaussian_density(space, 1.0, 0.5)
    traj = run_filter(signal, obs, xi, obs_path, prior, n_cells=0)
    assert len(traj) == 1
    np.testing.assert_allclose(
        normalize(traj[0]).values, prior.values, atol=1e-12
    )


def test_run_filter_uninformative_sensor_returns_prior():
    grid = TimeGrid(6.0, 40)
    space = SpaceGrid(-2.0, 4.0, 61)
    xi = uniform_schedule(grid)
    signal = _static_signal()
    path = simulate_signal(signal, grid, seed=7)
    obs = ObservationModel(
        obs_dim=1,
        g=lambda x, t: 0.25 * np.ones_like(np.asarray(x, dtype=float)),
        gamma=lambda t: np.array([[0.01]]),
    )
    obs_path = simulate_observations(path, obs, xi, seed=8)
    prior = gaussian_density(space, 1.0, 0.5)
    traj = run_filter(signal, obs, xi, obs_path, prior)
    assert len(traj) == grid.n_steps + 1
    np.testing.assert_allclose(normalize(traj[-1]).values, prior.values, atol=1e-10)


def test_run_filter_grid_mismatch():
    grid = TimeGrid(6.0, 12)
    xi = uniform_schedule(grid)
    signal = _static_signal()
    path = simulate_signal(signal, grid, seed=0)
    obs = _logistic_obs()
    obs_path = simulate_observations(path, obs, xi, seed=1)
    prior = gaussian_density(SpaceGrid(-2.0, 4.0, 41), 1.0, 0.5)
    other = uniform_schedule(TimeGrid(6.0, 24))
    with pytest.raises(GridMismatchError):
        run_filter(signal, obs, other, obs_path, prior)


def test_informative_times_beat_flat_region():
    # observing where g actually varies in x contracts the posterior more
    grid = TimeGrid(6.0, 60)
    space = SpaceGrid(-2.0, 4.0, 121)
    signal = _static_signal()  # draws X ~ N(1, 0.25) held fixed per seed
    signal = SignalModel(
        dim=1,
        drift=signal.drift,
        diffusion_sqrt=signal.diffusion_sqrt,
        initial_sampler=lambda rng: np.array([1.0 + 0.5 * rng.standard_normal()]),
    )
    obs = _logistic_obs(gamma=0.2)
    prior = gaussian_density(space, 1.0, 0.5)
    informative = gaussian_schedule(3.0, 0.3, grid)
    flat = gaussian_schedule(0.3, 0.3, grid)  # g(., t~0) is nearly x-constant

    def mean_kl(sched):
        q0 = normalize(LogDensityField(space, np.log(prior.values)))
        vals = []
        for r in range(20):
            path = simulate_signal(signal, grid, seed=1000 + r)
            obs_path = simulate_observations(path, obs, sched, seed=2000 + r)
            traj = run_filter(signal, obs, sched, obs_path, prior)
            vals.append(kl_divergence(normalize(traj[-1]), q0))
        return float(np.mean(vals))

    assert mean_kl(informative) > mean_kl(flat)
