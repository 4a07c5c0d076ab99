"""Backward sensitivity field and Monte-Carlo schedule gradients."""

import math

import numpy as np
import pytest

from sensorsched import (
    AdjointField,
    ConfigError,
    DensityField,
    GridMismatchError,
    LogDensityField,
    NonlinearProblem,
    NonlinearUtility,
    ObservationModel,
    SignalModel,
    SpaceGrid,
    SupportError,
    TimeGrid,
    gaussian_density,
    gradient_replicate,
    monte_carlo_gradient,
    run_adjoint,
    run_filter,
    simulate_observations,
    simulate_signal,
    terminal_adjoint,
    uniform_schedule,
)
from sensorsched.adjoint import adjoint_step_backward, replicate_gradient
from sensorsched.experiments import make_logistic_problem, nl_fd_comparison

# KL(N(0, 0.5^2) || N(0, 1)) = (sigma^2 - 1 - ln sigma^2) / 2
KL_HALF_STD = 0.3181471805599453

Z0 = 1.0 / (1.0 + math.exp(3.0))


def ou_problem(n_steps, n_points, n_replicates=1, g=None, t_end=2.0):
    grid = TimeGrid(t_end, n_steps)
    space = SpaceGrid(-3.0, 3.0, n_points)
    prior = gaussian_density(space, 0.0, 0.5)
    signal = SignalModel(
        dim=1,
        drift=lambda x, t: -0.5 * np.asarray(x, dtype=float),
        diffusion_sqrt=lambda t: 0.2 * np.eye(1),
        initial_sampler=lambda rng: rng.normal(0.0, 0.5, size=1),
    )
    obs = ObservationModel(
        obs_dim=1,
        g=g if g is not None else (lambda x, t: np.asarray(x, dtype=float)),
        gamma=lambda t: np.array([[0.09]]),
    )
    return NonlinearProblem(
        signal, obs, grid, space, prior, NonlinearUtility.kl_final(), n_replicates
    )


# --------------------------------------------------------- terminal field


def test_terminal_field_matches_gaussian_closed_form():
    # q = N(0, 0.5^2), prior = N(0, 1):
    # lambda_T = q * (log(q / prior) - KL) = q * (ln 2 - 1.5 x^2 - KL)
    space = SpaceGrid(-8.0, 8.0, 801)
    x = space.nodes
    logq = -x * x / 0.5 - math.log(0.5 * math.sqrt(2.0 * math.pi))
    prior = gaussian_density(space, 0.0, 1.0)
    lam = terminal_adjoint(LogDensityField(space, logq), prior, NonlinearUtility.kl_final())
    q = np.exp(logq)
    expected = q * (math.log(2.0) - 1.5 * x * x - KL_HALF_STD)
    np.testing.assert_allclose(lam.values, expected, atol=1e-8)
    assert abs(np.trapezoid(lam.values, dx=space.dx)) <= 1e-10


def test_terminal_field_vanishes_at_the_prior():
    space = SpaceGrid(-6.0, 6.0, 481)
    prior = gaussian_density(space, 0.0, 1.0)
    lam = terminal_adjoint(
        LogDensityField(space, np.log(prior.values)), prior, NonlinearUtility.kl_final()
    )
    np.testing.assert_allclose(lam.values, 0.0, atol=1e-12)


def test_terminal_field_of_custom_utility():
    # u_final = p^2 elementwise gives lambda_T = -p * 2p
    space = SpaceGrid(-4.0, 4.0, 161)
    logq = gaussian_density(space, 0.5, 0.7)
    logp = np.log(logq.values)
    util = NonlinearUtility.custom(
        u_final=lambda x, p: p**2, du_final=lambda x, p: 2.0 * p
    )
    lam = terminal_adjoint(LogDensityField(space, logp), logq, util)
    p = np.exp(logp)
    np.testing.assert_allclose(lam.values, -2.0 * p * p, atol=1e-15)


def test_terminal_field_zero_without_final_cost():
    space = SpaceGrid(-4.0, 4.0, 161)
    prior = gaussian_density(space, 0.0, 1.0)
    util = NonlinearUtility.custom(u_int=lambda x, p: p, du_int=lambda x, p: np.ones_like(p))
    lam = terminal_adjoint(
        LogDensityField(space, np.log(prior.values)), prior, util
    )
    np.testing.assert_array_equal(lam.values, 0.0)


def test_terminal_field_needs_prior_support():
    space = SpaceGrid(-1.0, 1.0, 101)
    vals = np.where(space.nodes >= 0.0, 1.0, 0.0)
    vals /= np.trapezoid(vals, dx=space.dx)
    half_prior = DensityField(space, vals)
    flat = LogDensityField(space, np.zeros(space.n_points))
    with pytest.raises(SupportError):
        terminal_adjoint(flat, half_prior, NonlinearUtility.kl_final())


def test_custom_utility_rejects_wrong_derivative():
    with pytest.raises(ConfigError, match="finite differences"):
        NonlinearUtility.custom(u_final=lambda x, p: p**2, du_final=lambda x, p: 3.0 * p)


def test_adjoint_field_rejects_non_finite():
    space = SpaceGrid(-1.0, 1.0, 11)
    with pytest.raises(ConfigError):
        AdjointField(space, np.full(11, np.nan))


# ------------------------------------------------------- backward transport


def test_static_signal_keeps_adjoint_constant():
    # no drift, no diffusion, no running cost: the backward equation is
    # d(lambda)/dt = 0, so every time slice equals the terminal one
    problem = make_logistic_problem(6.0, 60, 0.0, 2.0, 201, 1.0, 0.25, Z0, 0.1)
    xi = uniform_schedule(problem.grid)
    path = simulate_signal(problem.signal, problem.grid, seed=4)
    obs_path = simulate_observations(path, problem.obs, xi, seed=5)
    traj = run_filter(problem.signal, problem.obs, xi, obs_path, problem.prior)
    lam_T = terminal_adjoint(traj[-1], problem.prior, problem.utility)
    lam = run_adjoint(lam_T, traj, problem.signal, problem.utility, problem.grid)
    drift_from_terminal = max(
        float(np.max(np.abs(fld.values - lam_T.values))) for fld in lam
    )
    assert drift_from_terminal <= 1e-12
    assert abs(np.trapezoid(lam_T.values, dx=problem.space.dx)) <= 1e-8


def test_backward_flow_conserves_total_mass():
    # flux-form divergence with zero-flux boundaries: the plain-sum integral
    # of lambda is invariant (trapezoid differs only by boundary tails)
    problem = ou_problem(160, 161)
    util = NonlinearUtility.custom(u_final=lambda x, p: p**2, du_final=lambda x, p: 2.0 * p)
    xi = uniform_schedule(problem.grid)
    path = simulate_signal(problem.signal, problem.grid, seed=21)
    obs_path = simulate_observations(path, problem.obs, xi, seed=22)
    traj = run_filter(problem.signal, problem.obs, xi, obs_path, problem.prior)
    lam_T = terminal_adjoint(traj[-1], problem.prior, util)
    lam = run_adjoint(lam_T, traj, problem.signal, util, problem.grid)
    dx = problem.space.dx
    total_T = float(np.sum(lam_T.values)) * dx
    total_0 = float(np.sum(lam[0].values)) * dx
    assert total_0 == pytest.approx(total_T, abs=1e-10)


def test_single_step_matches_batched_backward():
    problem = ou_problem(40, 81)
    xi = uniform_schedule(problem.grid)
    path = simulate_signal(problem.signal, problem.grid, seed=31)
    obs_path = simulate_observations(path, problem.obs, xi, seed=32)
    traj = run_filter(problem.signal, problem.obs, xi, obs_path, problem.prior)
    lam_T = terminal_adjoint(traj[-1], problem.prior, problem.utility)
    lam = run_adjoint(lam_T, traj, problem.signal, problem.utility, problem.grid)
    t_end = problem.grid.t_end
    dt = problem.grid.dt
    stepped = adjoint_step_backward(lam_T, traj[-1], problem.signal, problem.utility, t_end, dt)
    np.testing.assert_allclose(stepped.values, lam[-2].values, atol=1e-14)


def test_zero_field_stays_zero():
    problem = ou_problem(40, 81)
    space = problem.space
    zero = AdjointField(space, np.zeros(space.n_points))
    p_t = LogDensityField(space, np.log(problem.prior.values))
    stepped = adjoint_step_backward(
        zero, p_t, problem.signal, problem.utility, 1.0, problem.grid.dt
    )
    np.testing.assert_array_equal(stepped.values, 0.0)


def test_backward_rejects_mismatched_trajectory():
    problem = ou_problem(40, 81)
    space = problem.space
    lam_T = AdjointField(space, np.zeros(space.n_points))
    traj = [LogDensityField(space, np.zeros(space.n_points))] * 7
    with pytest.raises(GridMismatchError):
        run_adjoint(lam_T, traj, problem.signal, problem.utility, problem.grid)


def test_step_rejects_mismatched_grids():
    problem = ou_problem(40, 81)
    other = SpaceGrid(-3.0, 3.0, 41)
    lam = AdjointField(problem.space, np.zeros(problem.space.n_points))
    p_t = LogDensityField(other, np.zeros(other.n_points))
    with pytest.raises(GridMismatchError):
        adjoint_step_backward(lam, p_t, problem.signal, problem.utility, 1.0, 0.05)


# ---------------------------------------------------------- schedule gradient


def test_uninformative_sensor_has_flat_gradient():
    # g constant in x carries no information; for the relative-entropy
    # objective the spatial integral of lambda vanishes, so eta ~ 0
    grid = TimeGrid(2.0, 160)
    space = SpaceGrid(-3.0, 3.0, 161)
    prior = gaussian_density(space, 0.0, 0.5)
    static = SignalModel(
        dim=1,
        drift=lambda x, t: np.zeros_like(np.asarray(x, dtype=float)),
        diffusion_sqrt=lambda t: np.zeros((1, 1)),
        initial_sampler=lambda rng: rng.normal(0.0, 0.5, size=1),
    )
    obs = ObservationModel(
        obs_dim=1,
        g=lambda x, t: np.full_like(np.asarray(x, dtype=float), 0.7),
        gamma=lambda t: np.array([[0.09]]),
    )
    problem = NonlinearProblem(static, obs, grid, space, prior, NonlinearUtility.kl_final())
    eta = monte_carlo_gradient(problem, uniform_schedule(grid), 1, master_seed=3)
    assert float(np.max(np.abs(eta.values))) <= 1e-10


def test_replicate_average_is_exact():
    problem = ou_problem(80, 81, n_replicates=2)
    xi = uniform_schedule(problem.grid)
    r0 = replicate_gradient(problem, xi, 42, 0)
    r1 = replicate_gradient(problem, xi, 42, 1)
    avg = monte_carlo_gradient(problem, xi, 2, master_seed=42)
    np.testing.assert_array_equal(avg.values, (r0 + r1) / 2.0)
    assert np.any(r0 != r1)


def test_gradient_replicate_matches_internal_path():
    problem = ou_problem(60, 81)
    xi = uniform_schedule(problem.grid)
    path = simulate_signal(problem.signal, problem.grid, seed=8)
    obs_path = simulate_observations(path, problem.obs, xi, seed=9)
    traj = run_filter(problem.signal, problem.obs, xi, obs_path, problem.prior)
    lam_T = terminal_adjoint(traj[-1], problem.prior, problem.utility)
    lam = run_adjoint(lam_T, traj, problem.signal, problem.utility, problem.grid)
    eta = gradient_replicate(lam, traj, path, problem.obs, problem.grid)
    assert eta.values.shape == (problem.grid.n_steps,)
    assert np.all(np.isfinite(eta.values))


def test_logistic_gradient_reduction():
    # for a scalar sensor, cell k of the gradient equals
    # (1 / 2 gamma^2) * integral of lambda_k(x) g(x) (g(x) - 2 g(x0)) dx
    problem = make_logistic_problem(6.0, 40, 0.0, 2.0, 161, 1.0, 0.25, Z0, 0.1)
    xi = uniform_schedule(problem.grid)
    path = simulate_signal(problem.signal, problem.grid, seed=13)
    obs_path = simulate_observations(path, problem.obs, xi, seed=14)
    traj = run_filter(problem.signal, problem.obs, xi, obs_path, problem.prior)
    lam_T = terminal_adjoint(traj[-1], problem.prior, problem.utility)
    lam = run_adjoint(lam_T, traj, problem.signal, problem.utility, problem.grid)
    eta = gradient_replicate(lam, traj, path, problem.obs, problem.grid)
    gamma2 = float(problem.obs.gamma_at(0.0)[0, 0])
    x = problem.space.nodes
    for k in [0, 17, 39]:
        t_k = problem.grid.times[k]
        g = np.asarray(problem.obs.g(x, t_k), dtype=float)
        g0 = float(np.asarray(problem.obs.g(path.states[k, 0], t_k)))
        direct = np.trapezoid(
            lam[k].values * g * (g - 2.0 * g0), dx=problem.space.dx
        ) / (2.0 * gamma2)
        assert eta.values[k] == pytest.approx(direct, rel=1e-12, abs=1e-15)


def test_zero_adjoint_gives_zero_gradient():
    problem = ou_problem(30, 41)
    space, grid = problem.space, problem.grid
    lam = [AdjointField(space, np.zeros(space.n_points))] * (grid.n_steps + 1)
    traj = [LogDensityField(space, np.log(problem.prior.values))] * (grid.n_steps + 1)
    path = simulate_signal(problem.signal, grid, seed=1)
    eta = gradient_replicate(lam, traj, path, problem.obs, grid)
    np.testing.assert_array_equal(eta.values, 0.0)


def test_gradient_deterministic_under_seed():
    problem = ou_problem(60, 81)
    xi = uniform_schedule(problem.grid)
    a = replicate_gradient(problem, xi, 5, 0)
    b = replicate_gradient(problem, xi, 5, 0)
    np.testing.assert_array_equal(a, b)


def test_static_observation_gradient_matches_differences():
    # static signal, frozen-noise objective: the pathwise gradient is the
    # exact derivative of the discretized objective, so centred differences
    # along the simplex agree to solver roundoff
    problem = make_logistic_problem(6.0, 60, 0.0, 2.0, 161, 1.0, 0.25, Z0, 0.1, n_replicates=4)
    res = nl_fd_comparison(problem, uniform_schedule(problem.grid), master_seed=7, h=1e-4)
    assert res["cells"].size >= 10
    assert res["max_rel_err"] <= 1e-6


def test_transport_error_shrinks_with_refinement():
    # with a drifting, diffusing signal the upwind transport is first-order
    # accurate, so the FD disagreement drops roughly linearly in dx
    coarse = nl_fd_comparison(
        ou_problem(120, 61), uniform_schedule(TimeGrid(2.0, 120)),
        master_seed=11, h=1e-4, mask_frac=0.4,
    )
    fine = nl_fd_comparison(
        ou_problem(480, 241), uniform_schedule(TimeGrid(2.0, 480)),
        master_seed=11, h=1e-4, mask_frac=0.4,
    )
    med_coarse = float(np.median(coarse["rel_err"]))
    med_fine = float(np.median(fine["rel_err"]))
    assert med_fine <= 0.30
    assert med_fine <= 0.3 * med_coarse
