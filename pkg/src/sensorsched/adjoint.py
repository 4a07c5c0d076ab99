"""Pathwise schedule gradients for the nonlinear filter.

The sensitivity of a filtering utility to the sensor density is computed
per observation path by integrating a backward transport equation driven
by the forward log-density trajectory::

    -d(lam)/dt = dx( lam * (f - Sigma * dx(log p)) + (Sigma / 2) * dx(lam) )
                 - p * Du_int(x, p)

with zero-flux boundaries, so the spatial integral of ``lam`` is conserved
by the discrete step whenever the running-cost source vanishes.

Sign convention
---------------
The backward field is the *negative* of the pathwise utility sensitivity.
Pairing it with the per-cell integrand

    eta_k = integral of lam_{t_k} * ( -g Gamma^{-1} g(X_k) + (1/2) g Gamma^{-1} g ) dx

makes the Monte-Carlo average of ``eta`` match centred finite differences
of the recorded utility value, for the built-in information-gain utility
(whose value is the negative relative entropy of the final conditional
density against the prior, so descent increases information gain) as well
as for user-supplied terminal / running costs.

Time conventions match the forward filter: cell ``k`` spans
``[t_k, t_{k+1}]``; the backward step from node ``k+1`` to node ``k``
evaluates the drift at ``t_k`` (cell left edge) and the log-density and
running-cost source at node ``k+1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from . import _kernels
from .errors import ConfigError, GridMismatchError, NumericsError, SupportError
from .schedule import GradientField, SensorSchedule, TimeGrid
from .sde import ObservationModel, ObservationPath, SignalModel, SignalPath, simulate_observations, simulate_signal
from .seeding import replicate_seeds, substream
from .zakai import (
    DensityField,
    LogDensityField,
    SpaceGrid,
    run_filter_arrays,
    tabulate_model_fields,
    trapezoid,
)


@dataclass(frozen=True, eq=False)
class AdjointField:
    """Backward sensitivity field on the space grid at one time."""

    space: SpaceGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.space.n_points,):
            raise GridMismatchError(
                f"adjoint values have shape {v.shape}, grid has {self.space.n_points} nodes"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigError("adjoint field contains non-finite values")
        object.__setattr__(self, "values", v)


def _log_normalized(logp: np.ndarray, dx: float) -> np.ndarray:
    """log of the trapezoid-normalized density, stably shifted."""
    mx = float(np.max(logp))
    if not np.isfinite(mx):
        raise NumericsError("log-density has no finite maximum; cannot normalize")
    shifted = logp - mx
    mass = float(np.trapezoid(np.exp(shifted), dx=dx))
    if mass <= 0.0 or not np.isfinite(mass):
        raise NumericsError("degenerate density mass in normalization")
    return shifted - np.log(mass)


class NonlinearUtility:
    """Terminal and running costs of the conditional density.

    Built with :meth:`kl_final` (negative relative entropy of the final
    conditional density against the prior, the default objective — descent
    on it increases information gain) or :meth:`custom`, which accepts
    elementwise callables ``u_final(x, p)`` / ``u_int(x, p)`` and their
    derivatives in ``p``.  Custom derivative callables are finite-difference
    spot-checked at construction.
    """

    def __init__(self, kind, u_final=None, du_final=None, u_int=None, du_int=None):
        self.kind = kind
        self.u_final = u_final
        self.du_final = du_final
        self.u_int = u_int
        self.du_int = du_int

    @staticmethod
    def kl_final() -> "NonlinearUtility":
        return NonlinearUtility("kl_final")

    @staticmethod
    def custom(
        u_final: Optional[Callable] = None,
        du_final: Optional[Callable] = None,
        u_int: Optional[Callable] = None,
        du_int: Optional[Callable] = None,
    ) -> "NonlinearUtility":
        if (u_final is None) != (du_final is None):
            raise ConfigError("custom utility: u_final and du_final must be supplied together")
        if (u_int is None) != (du_int is None):
            raise ConfigError("custom utility: u_int and du_int must be supplied together")
        if u_final is None and u_int is None:
            raise ConfigError("custom utility needs at least one of u_final, u_int")
        for u, du, name in ((u_final, du_final, "u_final"), (u_int, du_int, "u_int")):
            if u is not None:
                _spot_check_derivative(u, du, name)
        return NonlinearUtility("custom", u_final, du_final, u_int, du_int)

    @property
    def has_running_cost(self) -> bool:
        return self.u_int is not None


def _spot_check_derivative(u, du, name, rtol=1e-5):
    rng = np.random.default_rng(1908)
    x = rng.uniform(-1.5, 1.5, size=4)
    p = rng.uniform(0.2, 1.8, size=4)
    h = 1e-6
    fd = (np.asarray(u(x, p + h), dtype=float) - np.asarray(u(x, p - h), dtype=float)) / (2.0 * h)
    an = np.asarray(du(x, p), dtype=float)
    scale = max(float(np.max(np.abs(fd))), 1.0)
    if not np.all(np.isfinite(an)) or float(np.max(np.abs(an - fd))) > rtol * scale:
        raise ConfigError(
            f"custom utility: derivative of {name} disagrees with finite differences "
            f"(max error {float(np.max(np.abs(an - fd))):.3g})"
        )


def terminal_adjoint(
    logp_final: LogDensityField, prior: DensityField, utility: NonlinearUtility
) -> AdjointField:
    """Terminal condition of the backward equation.

    For the relative-entropy utility this is
    ``q * (log(q / prior) - integral(q * log(q / prior)))`` with ``q`` the
    normalized final density, so its spatial integral vanishes to rounding.
    For custom utilities it is ``-p * du_final(x, p)`` (negative pathwise
    sensitivity; see the module docstring).
    """
    space = logp_final.space
    if utility.kind == "kl_final":
        if prior.space != space:
            raise GridMismatchError("prior and filter density live on different grids")
        logq = _log_normalized(logp_final.log_values, space.dx)
        q = np.exp(logq)
        pos = q > 0.0
        if np.any(prior.values[pos] <= 0.0):
            raise SupportError(
                "prior vanishes where the final density has mass; "
                "relative entropy against it is undefined"
            )
        lr = np.zeros_like(q)
        lr[pos] = logq[pos] - np.log(prior.values[pos])
        centre = trapezoid(q * lr, space)
        return AdjointField(space, q * (lr - centre))
    if utility.u_final is None:
        return AdjointField(space, np.zeros(space.n_points))
    p = np.exp(logp_final.log_values)
    vals = -p * np.asarray(utility.du_final(space.nodes, p), dtype=float)
    return AdjointField(space, vals)


def _running_cost_source(
    utility: NonlinearUtility, logp_traj: np.ndarray, nodes: np.ndarray
) -> np.ndarray:
    """``-p * du_int`` at every time node (zeros without a running cost)."""
    n1, nx = logp_traj.shape
    src = np.zeros((n1, nx))
    if utility.has_running_cost:
        for k in range(n1):
            p = np.exp(logp_traj[k])
            src[k] = -p * np.asarray(utility.du_int(nodes, p), dtype=float)
    return src


def adjoint_step_backward(
    lam: AdjointField,
    p_t: LogDensityField,
    signal: SignalModel,
    utility: NonlinearUtility,
    t: float,
    dt: float,
) -> AdjointField:
    """One explicit backward step from time ``t`` to ``t - dt``.

    ``lam`` and ``p_t`` are the fields at ``t``; the drift is evaluated at
    the cell's left edge ``t - dt``, matching the trajectory routine.  The
    face velocity is clipped to the stable range +-dx/dt exactly as in the
    trajectory kernel (see the module notes on floored tails).
    """
    space = lam.space
    if p_t.space != space:
        raise GridMismatchError("adjoint and log-density grids differ")
    nodes = space.nodes
    f = np.broadcast_to(np.asarray(signal.drift(nodes, t - dt), dtype=float), nodes.shape)
    b = np.atleast_2d(np.asarray(signal.diffusion_sqrt(t - dt), dtype=float))
    sig2 = float(b[0, 0]) ** 2

    cur = lam.values
    lp = p_t.log_values
    dx = space.dx
    ff = 0.5 * (f[:-1] + f[1:])
    v = ff - sig2 * (lp[1:] - lp[:-1]) / dx
    v = np.clip(v, -dx / dt, dx / dt)
    lam_up = np.where(v > 0.0, cur[1:], cur[:-1])
    flux = np.zeros(space.n_points + 1)
    flux[1:-1] = v * lam_up + 0.5 * sig2 * (cur[1:] - cur[:-1]) / dx
    div = (flux[1:] - flux[:-1]) / dx
    src = np.zeros(space.n_points)
    if utility.has_running_cost:
        p = np.exp(lp)
        src = -p * np.asarray(utility.du_int(nodes, p), dtype=float)
    new = cur + dt * (div + src)
    if not np.all(np.isfinite(new)):
        raise NumericsError(f"adjoint field became non-finite at t = {t - dt:.6g}")
    return AdjointField(space, new)


def run_adjoint(
    terminal: AdjointField,
    logp_traj: List[LogDensityField],
    signal: SignalModel,
    utility: NonlinearUtility,
    grid: TimeGrid,
) -> List[AdjointField]:
    """Integrate the backward equation along a forward trajectory.

    Returns fields at every time node, index-aligned with ``logp_traj``
    (entry 0 is the initial time, entry ``n_steps`` equals ``terminal``).
    """
    if len(logp_traj) != grid.n_steps + 1:
        raise GridMismatchError(
            f"log-density trajectory has {len(logp_traj)} entries, "
            f"grid has {grid.n_steps + 1} nodes"
        )
    space = terminal.space
    for fld in logp_traj:
        if fld.space != space:
            raise GridMismatchError("trajectory fields live on different grids")
    lp = np.stack([fld.log_values for fld in logp_traj])
    fields = tabulate_model_fields(signal, None, grid, space)
    src = _running_cost_source(utility, lp, space.nodes)
    traj = _kernels.adjoint_backward(
        terminal.values.copy(), lp, fields["f"], fields["sig2"], src, grid.dt, space.dx
    )
    if not np.all(np.isfinite(traj)):
        raise NumericsError("backward integration produced non-finite values")
    return [AdjointField(space, traj[k]) for k in range(grid.n_steps + 1)]


def _replicate_gradient_arrays(g_cells, gi_cells, lam_traj, gx_cells, dx):
    """Per-cell sensitivity; ``g_cells``/``gi_cells`` are cell left-edge values."""
    integrand = (
        -g_cells * (gi_cells * gx_cells)[:, None] + 0.5 * g_cells * g_cells * gi_cells[:, None]
    )
    return np.trapezoid(lam_traj[:-1] * integrand, dx=dx, axis=1)


def gradient_replicate(
    lam_traj: List[AdjointField],
    logp_traj: List[LogDensityField],
    path: SignalPath,
    obs: ObservationModel,
    grid: TimeGrid,
) -> GradientField:
    """Schedule sensitivity of one replicate.

    Cell ``k`` integrates the terminal-time-free expression
    ``lam_{t_k} * (-g Gamma^{-1} g(X_k) + g Gamma^{-1} g / 2)`` over space;
    the result does not depend on the schedule itself.
    """
    if len(lam_traj) != grid.n_steps + 1 or len(logp_traj) != grid.n_steps + 1:
        raise GridMismatchError("trajectories do not match the time grid")
    space = lam_traj[0].space
    times = grid.times
    n = grid.n_steps
    g = np.empty((n, space.n_points))
    gi = np.empty(n)
    gx = np.empty(n)
    for k in range(n):
        g[k] = np.broadcast_to(
            np.asarray(obs.g(space.nodes, times[k]), dtype=float), space.nodes.shape
        )
        gi[k] = 1.0 / float(obs.gamma_at(times[k])[0, 0])
        gx[k] = float(np.asarray(obs.g(path.states[k, 0], times[k])))
    lam = np.stack([fld.values for fld in lam_traj])
    vals = _replicate_gradient_arrays(g, gi, lam, gx, space.dx)
    return GradientField(grid, vals)


@dataclass
class NonlinearProblem:
    """Scalar nonlinear filtering problem for schedule optimization."""

    signal: SignalModel
    obs: ObservationModel
    grid: TimeGrid
    space: SpaceGrid
    prior: DensityField
    utility: NonlinearUtility
    n_replicates: int = 1

    def __post_init__(self):
        if self.prior.space != self.space:
            raise GridMismatchError("prior density lives on a different space grid")
        if self.n_replicates < 1:
            raise ConfigError("n_replicates must be at least 1")
        self._fields = None
        self._logp0 = None

    def fields(self) -> dict:
        if self._fields is None:
            self._fields = tabulate_model_fields(self.signal, self.obs, self.grid, self.space)
        return self._fields

    def log_prior(self) -> np.ndarray:
        if self._logp0 is None:
            with np.errstate(divide="ignore"):
                self._logp0 = np.log(self.prior.values)
        return self._logp0


def _filter_one_path(problem: NonlinearProblem, schedule: SensorSchedule, signal_seed, obs_seed):
    path = simulate_signal(problem.signal, problem.grid, signal_seed)
    obs_path = simulate_observations(path, problem.obs, schedule, obs_seed)
    traj = run_filter_arrays(
        problem.fields(),
        problem.grid,
        problem.space,
        schedule.density,
        obs_path.increments[:, 0],
        problem.log_prior(),
    )
    return path, traj


def replicate_gradient(
    problem: NonlinearProblem, schedule: SensorSchedule, master_seed, replicate: int
) -> np.ndarray:
    """Raw per-cell sensitivity of replicate ``replicate`` under the master seed."""
    sig_seed, obs_seed = replicate_seeds(master_seed, replicate)
    path, traj = _filter_one_path(problem, schedule, sig_seed, obs_seed)
    space, grid = problem.space, problem.grid
    lam_T = terminal_adjoint(LogDensityField(space, traj[-1]), problem.prior, problem.utility)
    fields = problem.fields()
    src = _running_cost_source(problem.utility, traj, space.nodes)
    lam = _kernels.adjoint_backward(
        lam_T.values.copy(), traj, fields["f"], fields["sig2"], src, grid.dt, space.dx
    )
    if not np.all(np.isfinite(lam)):
        raise NumericsError("backward integration produced non-finite values")
    times = grid.times
    gx = np.array(
        [float(np.asarray(problem.obs.g(path.states[k, 0], times[k]))) for k in range(grid.n_steps)]
    )
    return _replicate_gradient_arrays(fields["g"], fields["gamma_inv"], lam, gx, space.dx)


def monte_carlo_gradient(
    problem: NonlinearProblem,
    schedule: SensorSchedule,
    n_replicates: Optional[int] = None,
    master_seed=0,
) -> GradientField:
    """Average the per-replicate sensitivity over independent paths.

    Replicate ``r`` draws its signal and observation noise from
    ``replicate_seeds(master_seed, r)``, so a run with ``n`` replicates
    reproduces exactly the first ``n`` single-replicate results.
    """
    n = problem.n_replicates if n_replicates is None else int(n_replicates)
    if n < 1:
        raise ConfigError("n_replicates must be at least 1")
    etas = np.stack(
        [replicate_gradient(problem, schedule, master_seed, r) for r in range(n)]
    )
    return GradientField(problem.grid, np.mean(etas, axis=0))


def _utility_of_trajectory(problem: NonlinearProblem, traj: np.ndarray) -> float:
    space, grid = problem.space, problem.grid
    util = problem.utility
    if util.kind == "kl_final":
        logq = _log_normalized(traj[-1], space.dx)
        q = np.exp(logq)
        pos = q > 0.0
        if np.any(problem.prior.values[pos] <= 0.0):
            raise SupportError("prior vanishes where the final density has mass")
        lr = np.zeros_like(q)
        lr[pos] = logq[pos] - np.log(problem.prior.values[pos])
        return -trapezoid(q * lr, space)
    total = 0.0
    if util.u_final is not None:
        p = np.exp(traj[-1])
        total += trapezoid(np.asarray(util.u_final(space.nodes, p), dtype=float), space)
    if util.u_int is not None:
        per_node = np.array(
            [
                trapezoid(np.asarray(util.u_int(space.nodes, np.exp(traj[k])), dtype=float), space)
                for k in range(grid.n_steps + 1)
            ]
        )
        total += float(np.trapezoid(per_node, dx=grid.dt))
    return float(total)


def nonlinear_utility_value(problem: NonlinearProblem, schedule: SensorSchedule, seed_pair) -> float:
    """Utility of one filtered path; ``seed_pair = (signal_seed, obs_seed)``."""
    sig_seed, obs_seed = seed_pair
    _, traj = _filter_one_path(problem, schedule, sig_seed, obs_seed)
    return _utility_of_trajectory(problem, traj)


def mean_utility(
    problem: NonlinearProblem, schedule: SensorSchedule, master_seed, n_replicates: int
) -> float:
    """Mean utility over the replicate seed streams of ``master_seed``."""
    vals = [
        nonlinear_utility_value(problem, schedule, replicate_seeds(master_seed, r))
        for r in range(n_replicates)
    ]
    return float(np.mean(vals))


def coupled_mean_utility(
    problem: NonlinearProblem,
    schedule: SensorSchedule,
    base: SensorSchedule,
    master_seed,
    n_replicates: int,
) -> float:
    """Mean utility with the realized observation noise pinned to ``base``.

    Each replicate draws its signal path and observation noise once, under
    ``base``; re-evaluating at ``schedule`` moves only the drift part of
    the increments, ``dZ_k = dZ_k(base) + g(X_k, t_k) (xi_k - xi_base_k) dt``.
    Differencing this objective across nearby schedules therefore probes
    the drift-direction sensitivity — the quantity the pathwise adjoint
    computes — instead of the O(1/sqrt(xi dt)) noise-amplitude response
    that an independent re-simulation would add on top.
    """
    if schedule.grid != base.grid:
        raise GridMismatchError("schedule and base schedule use different time grids")
    grid = problem.grid
    times = grid.times
    shift = (schedule.density - base.density) * grid.dt
    vals = np.empty(n_replicates)
    for r in range(n_replicates):
        sig_seed, obs_seed = replicate_seeds(master_seed, r)
        path = simulate_signal(problem.signal, grid, sig_seed)
        base_obs = simulate_observations(path, problem.obs, base, obs_seed)
        gx = np.array(
            [
                float(np.asarray(problem.obs.g(path.states[k, 0], times[k])))
                for k in range(grid.n_steps)
            ]
        )
        dz = base_obs.increments[:, 0] + gx * shift
        traj = run_filter_arrays(
            problem.fields(), grid, problem.space, schedule.density, dz, problem.log_prior()
        )
        vals[r] = _utility_of_trajectory(problem, traj)
    return float(np.mean(vals))
