"""Grid-based nonlinear filter for scheduled observations (1-d state).

The unnormalized conditional density is propagated in log form with one
explicit Euler step per time cell:

    log p   <-   log p  +  (L* p / p) dt
                        -  (1/2) g(x,t)^2 Gamma^{-1}(t) xi_k dt
                        +  g(x,t) Gamma^{-1}(t) dZ_k,

where L* is the Fokker-Planck operator of the signal, discretized in flux
form with first-order upwind advection and central diffusion on a uniform
space grid with zero-flux boundaries.  The generator ratio is evaluated
on the max-shifted density, which makes it invariant under the arbitrary
normalization of p.

This lane is restricted to scalar signals and scalar observations; the
model callables (drift, g) must act elementwise on node arrays.  Explicit
stability limits are enforced before stepping:

    max |f| dt / dx <= 1        and        Sigma dt / dx^2 <= 1/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConfigError, GridMismatchError, NumericsError, SupportError
from .schedule import SensorSchedule, TimeGrid
from .sde import ObservationModel, ObservationPath, SignalModel

__all__ = [
    "SpaceGrid",
    "LogDensityField",
    "DensityField",
    "gaussian_density",
    "normalize",
    "kl_divergence",
    "moments",
    "log_zakai_step",
    "run_filter",
]

# relative density floor below which the generator ratio is frozen; keeps
# the update finite on nodes that underflowed to (numerically) zero mass
_P_FLOOR = 1e-12


@dataclass(frozen=True)
class SpaceGrid:
    """Uniform 1-d grid with n_points nodes spanning [x_min, x_max]."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise ConfigError("space grid bounds must be finite")
        if self.x_max <= self.x_min:
            raise ConfigError(f"x_max must exceed x_min, got [{self.x_min}, {self.x_max}]")
        if self.n_points < 8:
            raise ConfigError(f"n_points must be at least 8, got {self.n_points}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)


def trapezoid(values: np.ndarray, space: SpaceGrid) -> float:
    """Trapezoid quadrature of nodal values over the grid."""
    return float(np.trapezoid(values, dx=space.dx))


@dataclass(frozen=True, eq=False)
class LogDensityField:
    """Pointwise log of an unnormalized density; -inf marks zero mass."""

    space: SpaceGrid
    log_values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.log_values, dtype=np.float64)
        if v.shape != (self.space.n_points,):
            raise ConfigError(
                f"log_values must have shape ({self.space.n_points},), got {v.shape}"
            )
        if np.any(np.isnan(v)) or np.any(v == np.inf):
            raise ConfigError("log-density contains NaN or +inf values")
        object.__setattr__(self, "log_values", v)


@dataclass(frozen=True, eq=False)
class DensityField:
    """Normalized probability density on a space grid (trapezoid mass 1)."""

    space: SpaceGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.space.n_points,):
            raise ConfigError(
                f"values must have shape ({self.space.n_points},), got {v.shape}"
            )
        if not np.all(np.isfinite(v)) or np.any(v < 0.0):
            raise ConfigError("density values must be finite and nonnegative")
        mass = trapezoid(v, self.space)
        if abs(mass - 1.0) > 1e-8:
            raise ConfigError(f"density mass must be 1 within 1e-8, got {mass!r}")
        object.__setattr__(self, "values", v)


def gaussian_density(space: SpaceGrid, mean: float, std: float) -> DensityField:
    """N(mean, std^2) restricted to the grid and renormalized."""
    if std <= 0.0:
        raise ConfigError(f"std must be positive, got {std}")
    z = (space.nodes - mean) / std
    vals = np.exp(-0.5 * np.minimum(z * z, 1400.0))
    vals = np.maximum(vals, 1e-300)
    return DensityField(space, vals / trapezoid(vals, space))


def normalize(logp: LogDensityField) -> DensityField:
    """Exponentiate and rescale to unit trapezoid mass."""
    lv = logp.log_values
    m = float(np.max(lv))
    if not math.isfinite(m):
        raise NumericsError("cannot normalize a log-density with no finite entries")
    y = np.exp(lv - m)
    z = trapezoid(y, logp.space)
    if not (math.isfinite(z) and z > 0.0):
        raise NumericsError(f"degenerate density: trapezoid mass {z!r} after shift")
    return DensityField(logp.space, y / z)


def kl_divergence(q: DensityField, q0: DensityField) -> float:
    """KL(q || q0) by trapezoid quadrature, with 0 log 0 read as 0."""
    if q.space != q0.space:
        raise GridMismatchError("densities live on different space grids")
    mask = q.values > 0.0
    if np.any(q0.values[mask] <= 0.0):
        raise SupportError("reference density vanishes where q has mass")
    integrand = np.zeros_like(q.values)
    integrand[mask] = q.values[mask] * (np.log(q.values[mask]) - np.log(q0.values[mask]))
    return trapezoid(integrand, q.space)


def moments(q: DensityField) -> tuple[float, float]:
    """Trapezoid mean and variance of a density field."""
    x = q.space.nodes
    mean = trapezoid(x * q.values, q.space)
    var = trapezoid((x - mean) ** 2 * q.values, q.space)
    return mean, var


def _scalar_sigma2(signal: SignalModel, t: float) -> float:
    b = np.atleast_2d(np.asarray(signal.diffusion_sqrt(t), dtype=np.float64))
    return float((b @ b.T)[0, 0])


def _check_filter_lane(signal: SignalModel, obs: Optional[ObservationModel]):
    if signal.dim != 1:
        raise ConfigError("the grid filter handles scalar signals only")
    if obs is not None and obs.obs_dim != 1:
        raise ConfigError("the grid filter handles scalar observations only")


def tabulate_model_fields(
    signal: SignalModel,
    obs: Optional[ObservationModel],
    grid: TimeGrid,
    space: SpaceGrid,
) -> dict:
    """Evaluate the model callables on the (cell-time, node) lattice.

    Returns arrays keyed by ``f`` (drift, n_steps x nx), ``sig2``
    (diffusion variance per cell) and, when an observation model is given,
    ``g`` (observation function, n_steps x nx) and ``gamma_inv`` (scalar
    inverse noise variance per cell).  These depend only on the model and
    the grids and are reused across replicates and schedule perturbations.
    """
    _check_filter_lane(signal, obs)
    x = space.nodes
    n = grid.n_steps
    f = np.empty((n, space.n_points))
    sig2 = np.empty(n)
    g = np.empty((n, space.n_points)) if obs is not None else None
    gamma_inv = np.empty(n) if obs is not None else None
    times = grid.times
    for k in range(n):
        t = times[k]
        f[k] = np.broadcast_to(np.asarray(signal.drift(x, t), dtype=np.float64), x.shape)
        sig2[k] = _scalar_sigma2(signal, t)
        if obs is not None:
            g[k] = np.broadcast_to(np.asarray(obs.g(x, t), dtype=np.float64), x.shape)
            gam = float(obs.gamma_at(t)[0, 0])
            if gam <= 0.0:
                raise ConfigError(f"Gamma({t}) must be positive")
            gamma_inv[k] = 1.0 / gam
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(sig2))):
        raise ConfigError("model callables produced non-finite values on the grid")
    if obs is not None and not np.all(np.isfinite(g)):
        raise ConfigError("model callables produced non-finite values on the grid")
    return {"f": f, "sig2": sig2, "g": g, "gamma_inv": gamma_inv}


def check_cfl(fields: dict, grid: TimeGrid, space: SpaceGrid):
    """Stability pre-check; raises ConfigError before any stepping."""
    dt, dx = grid.dt, space.dx
    adv = float(np.max(np.abs(fields["f"]))) * dt / dx
    dif = float(np.max(fields["sig2"])) * dt / dx**2
    if adv > 1.0 + 1e-12:
        raise ConfigError(f"advection stability violated: max|f| dt/dx = {adv:.4g} > 1")
    if dif > 0.5 + 1e-12:
        raise ConfigError(f"diffusion stability violated: Sigma dt/dx^2 = {dif:.4g} > 0.5")


def observation_source(fields: dict, xi: np.ndarray, dz: np.ndarray, dt: float) -> np.ndarray:
    """Per-cell observation term g Gamma^{-1} dZ - 0.5 g^2 Gamma^{-1} xi dt."""
    g = fields["g"]
    gi = fields["gamma_inv"]
    return g * (gi * dz)[:, None] - 0.5 * g * g * (gi * xi * dt)[:, None]


def run_filter_arrays(
    fields: dict,
    grid: TimeGrid,
    space: SpaceGrid,
    xi: np.ndarray,
    dz: np.ndarray,
    logp0: np.ndarray,
    n_cells: int | None = None,
) -> np.ndarray:
    """Kernel-backed forward pass; returns the (n_cells+1, nx) trajectory."""
    if n_cells is None:
        n_cells = grid.n_steps
    if not 0 <= n_cells <= grid.n_steps:
        raise ConfigError(f"n_cells must lie in [0, {grid.n_steps}], got {n_cells}")
    check_cfl(fields, grid, space)
    src = observation_source(fields, xi, dz, grid.dt)
    traj, bad = _kernels.zakai_forward(
        np.ascontiguousarray(logp0, dtype=np.float64),
        np.ascontiguousarray(src[:n_cells]),
        np.ascontiguousarray(fields["f"][:n_cells]),
        np.ascontiguousarray(fields["sig2"][:n_cells]),
        grid.dt,
        space.dx,
    )
    if bad >= 0:
        t_bad = (bad + 1) * grid.dt
        raise NumericsError(f"filter produced non-finite log-density at t = {t_bad:.6g} (cell {bad})")
    return traj


def log_zakai_step(
    logp: LogDensityField,
    dz: float,
    xi_k: float,
    signal: SignalModel,
    obs: ObservationModel,
    t: float,
    dt: float,
) -> LogDensityField:
    """One explicit Euler update of the log-density over [t, t + dt].

    Mirrors the kernel arithmetic exactly; intended for stepwise use and
    tests, while :func:`run_filter` drives whole trajectories through the
    compiled path.
    """
    _check_filter_lane(signal, obs)
    if xi_k < 0.0:
        raise ConfigError(f"schedule value must be nonnegative, got {xi_k}")
    if dt <= 0.0:
        raise ConfigError(f"dt must be positive, got {dt}")
    space = logp.space
    x = space.nodes
    f = np.broadcast_to(np.asarray(signal.drift(x, t), dtype=np.float64), x.shape)
    g = np.broadcast_to(np.asarray(obs.g(x, t), dtype=np.float64), x.shape)
    sig2 = _scalar_sigma2(signal, t)
    gam = float(obs.gamma_at(t)[0, 0])
    dx = space.dx
    adv = float(np.max(np.abs(f))) * dt / dx
    if adv > 1.0 + 1e-12:
        raise ConfigError(f"advection stability violated: max|f| dt/dx = {adv:.4g} > 1")
    if sig2 * dt / dx**2 > 0.5 + 1e-12:
        raise ConfigError(
            f"diffusion stability violated: Sigma dt/dx^2 = {sig2 * dt / dx**2:.4g} > 0.5"
        )
    lv = logp.log_values
    p = np.exp(lv - np.max(lv))
    ff = 0.5 * (f[:-1] + f[1:])
    p_up = np.where(ff > 0.0, p[:-1], p[1:])
    flux = np.zeros(space.n_points + 1)
    flux[1:-1] = ff * p_up - 0.5 * sig2 * (p[1:] - p[:-1]) / dx
    lstar = -(flux[1:] - flux[:-1]) / dx
    dz_val = float(np.asarray(dz).reshape(()))
    with np.errstate(over="ignore"):
        src = g * dz_val / gam - 0.5 * g * g * xi_k * dt / gam
        new = lv + (lstar / np.maximum(p, _P_FLOOR)) * dt + src
    if not np.all(np.isfinite(new)):
        raise NumericsError(f"filter produced non-finite log-density at t = {t + dt:.6g}")
    return LogDensityField(space, new)


def run_filter(
    signal: SignalModel,
    obs: ObservationModel,
    schedule: SensorSchedule,
    obs_path: ObservationPath,
    prior: DensityField,
    n_cells: int | None = None,
) -> list[LogDensityField]:
    """Forward filter pass; element k of the result lives at node time t_k.

    ``n_cells`` limits how many observation cells are assimilated
    (``n_cells=0`` returns just the log prior).
    """
    if schedule.grid != obs_path.grid:
        raise GridMismatchError("schedule and observation path use different time grids")
    grid = schedule.grid
    space = prior.space
    fields = tabulate_model_fields(signal, obs, grid, space)
    with np.errstate(divide="ignore"):
        logp0 = np.log(prior.values)
    traj = run_filter_arrays(
        fields, grid, space, schedule.density, obs_path.increments[:, 0], logp0, n_cells
    )
    return [LogDensityField(space, row) for row in traj]
