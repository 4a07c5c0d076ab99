"""Projected gradient descent over sensor schedules.

A schedule is optimized through its cell masses ``w_k = xi_k * dt``, which
live on the probability simplex.  One iteration is::

    w  <-  proj_simplex( w - step * eta * dt )

where ``eta`` is the per-cell utility sensitivity (matrix adjoint for
linear-Gaussian problems, Monte-Carlo pathwise adjoint for nonlinear
ones).  Descent minimizes the recorded utility value — for the built-in
information-gain objective the value is the negative gain, so descent
increases the gain.

Because the iterates stay on the simplex, finite differences of the
objective along projected coordinate perturbations estimate the
*tangent-space* derivative ``eta_j - mean(eta)``; the helper
:func:`finite_difference_gradient` returns exactly that quantity and
shares noise seeds with the adjoint estimate so the two are comparable
replicate by replicate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from .adjoint import NonlinearProblem, coupled_mean_utility, mean_utility, monte_carlo_gradient
from .errors import ConfigError, SensorSchedError
from .kalman_bucy import (
    LinearGaussianModel,
    MatrixUtility,
    adjoint_matrix_backward,
    integrate_riccati,
    lg_gradient,
    utility_value,
)
from .schedule import GradientField, SensorSchedule, TimeGrid, project_masses
from .seeding import STREAM_EVAL, STREAM_GRAD, substream


@dataclass
class LinearGaussianProblem:
    """Deterministic schedule-design problem for a linear-Gaussian model."""

    model: LinearGaussianModel
    utility: MatrixUtility
    grid: TimeGrid


OedProblem = Union[LinearGaussianProblem, NonlinearProblem]


@dataclass
class TraceRecord:
    iteration: int
    schedule: SensorSchedule
    utility: float
    grad_norm: float
    seconds: float


@dataclass
class OptimizationTrace:
    """Iterates of one optimization run (includes the final iterate)."""

    records: List[TraceRecord] = field(default_factory=list)
    aborted: bool = False
    message: str = ""

    @property
    def schedules(self) -> List[SensorSchedule]:
        return [r.schedule for r in self.records]

    @property
    def utilities(self) -> np.ndarray:
        return np.array([r.utility for r in self.records])

    @property
    def final(self) -> SensorSchedule:
        if not self.records:
            raise ConfigError("trace holds no iterates")
        return self.records[-1].schedule


def gradient(
    problem: OedProblem, schedule: SensorSchedule, master_seed=0
) -> GradientField:
    """Per-cell utility sensitivity; the seed only matters for Monte-Carlo problems."""
    if isinstance(problem, LinearGaussianProblem):
        cov = integrate_riccati(problem.model, schedule)
        adj = adjoint_matrix_backward(cov, schedule, problem.model, problem.utility)
        return lg_gradient(adj, cov, problem.model)
    return monte_carlo_gradient(problem, schedule, problem.n_replicates, master_seed)


def objective(problem: OedProblem, schedule: SensorSchedule, master_seed=0, n_eval: int = 1) -> float:
    """Utility value; the Monte-Carlo mean over ``n_eval`` replicates when stochastic."""
    if isinstance(problem, LinearGaussianProblem):
        return utility_value(integrate_riccati(problem.model, schedule), problem.utility)
    return mean_utility(problem, schedule, master_seed, n_eval)


def optimize(
    problem: OedProblem,
    schedule0: SensorSchedule,
    n_iters: int,
    step_size: float,
    master_seed=0,
    n_eval: int = 1,
) -> OptimizationTrace:
    """Projected descent from ``schedule0``; returns ``n_iters + 1`` records.

    The utility of every iterate is evaluated with the same fixed replicate
    seeds so the recorded values are comparable across iterations, while
    each gradient draws a fresh seed stream.  If an evaluation fails or a
    gradient turns non-finite, the trace returned so far is marked aborted.
    """
    if n_iters < 0:
        raise ConfigError("n_iters must be nonnegative")
    if step_size <= 0.0:
        raise ConfigError("step_size must be positive")
    grid = schedule0.grid
    eval_root = substream(master_seed, STREAM_EVAL)
    trace = OptimizationTrace()
    xi = schedule0
    t0 = time.perf_counter()
    for i in range(n_iters + 1):
        try:
            if isinstance(problem, LinearGaussianProblem):
                cov = integrate_riccati(problem.model, xi)
                u = utility_value(cov, problem.utility)
                adj = adjoint_matrix_backward(cov, xi, problem.model, problem.utility)
                grad = lg_gradient(adj, cov, problem.model)
            else:
                u = mean_utility(problem, xi, eval_root, n_eval)
                grad = monte_carlo_gradient(
                    problem, xi, problem.n_replicates, substream(master_seed, STREAM_GRAD, i)
                )
        except SensorSchedError as exc:
            trace.aborted = True
            trace.message = f"iteration {i}: {exc}"
            return trace
        trace.records.append(
            TraceRecord(i, xi, u, float(np.linalg.norm(grad.values)), time.perf_counter() - t0)
        )
        if i == n_iters:
            break
        w = xi.masses - step_size * grad.values * grid.dt
        xi = SensorSchedule.from_masses(grid, project_masses(w))
    return trace


def finite_difference_gradient(
    problem: OedProblem,
    schedule: SensorSchedule,
    h: float = 1e-6,
    master_seed=0,
    cells: Optional[Sequence[int]] = None,
    n_eval: Optional[int] = None,
) -> np.ndarray:
    """Centred differences of the objective along projected mass bumps.

    Entry ``j`` perturbs mass ``j`` by ``+-h`` (reprojected onto the
    simplex), so for interior schedules it estimates the tangent-space
    derivative ``eta_j - mean(eta)``.  Monte-Carlo problems difference the
    common-random-number objective of :func:`coupled_mean_utility`:
    replicate seeds are shared with :func:`gradient` and the realized
    noise is pinned to the unperturbed ``schedule``, so the differences
    estimate the drift-direction derivative rather than the noise.  Cells
    not listed in ``cells`` are returned as NaN.
    """
    if h <= 0.0:
        raise ConfigError("h must be positive")
    grid = schedule.grid
    if isinstance(problem, NonlinearProblem) and n_eval is None:
        n_eval = problem.n_replicates

    def value(masses: np.ndarray) -> float:
        sched = SensorSchedule.from_masses(grid, masses)
        if isinstance(problem, LinearGaussianProblem):
            return utility_value(integrate_riccati(problem.model, sched), problem.utility)
        return coupled_mean_utility(problem, sched, schedule, master_seed, n_eval)

    w = schedule.masses
    idx = range(grid.n_steps) if cells is None else [int(c) for c in cells]
    out = np.full(grid.n_steps, np.nan)
    for j in idx:
        if not 0 <= j < grid.n_steps:
            raise ConfigError(f"cell index {j} outside [0, {grid.n_steps})")
        bump = np.zeros_like(w)
        bump[j] = h
        up = value(project_masses(w + bump))
        dn = value(project_masses(w - bump))
        out[j] = (up - dn) / (2.0 * h)
    return out
