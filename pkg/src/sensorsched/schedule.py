"""Sensor schedules: probability densities on a uniform time grid.

A schedule assigns measurement effort over the horizon [0, T].  It is
stored as a piecewise-constant density on the cells of a :class:`TimeGrid`
and always integrates to one: ``sum(density) * dt == 1``.  The mass
vector ``density * dt`` therefore lives on the probability simplex, which
is the geometry used by the projected-gradient optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GridMismatchError

__all__ = [
    "TimeGrid",
    "SensorSchedule",
    "GradientField",
    "uniform_schedule",
    "gaussian_schedule",
    "project_to_simplex",
    "project_masses",
    "schedule_mass",
]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, t_end] with n_steps cells of width dt."""

    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t_end) and self.t_end > 0.0):
            raise ConfigError(f"t_end must be a positive finite number, got {self.t_end}")
        if self.n_steps < 2:
            raise ConfigError(f"n_steps must be at least 2, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_steps

    @property
    def times(self) -> np.ndarray:
        """Node times t_0 = 0, ..., t_{n_steps} = t_end."""
        return np.linspace(0.0, self.t_end, self.n_steps + 1)

    @property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.dt


def _check_same_grid(a: TimeGrid, b: TimeGrid):
    if a != b:
        raise GridMismatchError(f"time grids differ: {a} vs {b}")


@dataclass(frozen=True, eq=False)
class SensorSchedule:
    """Piecewise-constant schedule density on a time grid.

    Invariants enforced at construction: values are finite and
    nonnegative, and the total mass ``sum(density) * dt`` equals one to
    within 1e-12.
    """

    grid: TimeGrid
    density: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.ascontiguousarray(self.density, dtype=np.float64)
        if d.shape != (self.grid.n_steps,):
            raise ConfigError(
                f"density must have shape ({self.grid.n_steps},), got {d.shape}"
            )
        if not np.all(np.isfinite(d)):
            raise ConfigError("schedule density contains non-finite values")
        if np.any(d < 0.0):
            raise ConfigError("schedule density must be nonnegative")
        mass = float(np.sum(d) * self.grid.dt)
        if abs(mass - 1.0) > 1e-12:
            raise ConfigError(f"schedule mass must be 1, got {mass!r}")
        object.__setattr__(self, "density", d)

    @property
    def masses(self) -> np.ndarray:
        """Per-cell masses density * dt (a point on the simplex)."""
        return self.density * self.grid.dt

    def mean_time(self) -> float:
        """Mass-weighted mean of the cell centers."""
        return float(np.sum(self.grid.cell_centers * self.masses))

    @staticmethod
    def from_masses(grid: TimeGrid, masses: np.ndarray) -> "SensorSchedule":
        return SensorSchedule(grid, np.asarray(masses, dtype=np.float64) / grid.dt)


@dataclass(frozen=True, eq=False)
class GradientField:
    """Utility gradient with respect to the schedule density, one value per cell."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.n_steps,):
            raise ConfigError(
                f"gradient must have shape ({self.grid.n_steps},), got {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigError("gradient contains non-finite values")
        object.__setattr__(self, "values", v)


def uniform_schedule(grid: TimeGrid) -> SensorSchedule:
    """Constant density 1 / t_end."""
    return SensorSchedule(grid, np.full(grid.n_steps, 1.0 / grid.t_end))


def gaussian_schedule(mean: float, std: float, grid: TimeGrid) -> SensorSchedule:
    """Truncated-Gaussian schedule.

    The density is proportional to the N(mean, std^2) pdf evaluated at the
    cell centers and renormalized to unit mass on [0, t_end].
    """
    if not (math.isfinite(std) and std > 0.0):
        raise ConfigError(f"std must be positive, got {std}")
    if not math.isfinite(mean):
        raise ConfigError(f"mean must be finite, got {mean}")
    c = grid.cell_centers
    pdf = np.exp(-0.5 * ((c - mean) / std) ** 2)
    total = np.sum(pdf) * grid.dt
    if total <= 0.0 or not np.isfinite(total):
        raise ConfigError(
            f"gaussian schedule N({mean}, {std}^2) has no mass on [0, {grid.t_end}]"
        )
    return SensorSchedule(grid, pdf / total)


def project_masses(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex.

    Sort-and-threshold algorithm: with u the decreasing rearrangement of
    v, find the largest rho with u_rho + (1 - cumsum(u)_rho) / rho > 0 and
    clip v shifted by that threshold.  O(n log n), exact up to rounding.
    """
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    cssmn = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    cond = u - cssmn / ind > 0.0
    rho = ind[cond][-1]
    lam = -cssmn[rho - 1] / rho
    return np.maximum(v + lam, 0.0)


def project_to_simplex(raw_density: np.ndarray, grid: TimeGrid) -> SensorSchedule:
    """Project an unconstrained density vector onto the feasible schedules.

    The projection is Euclidean in mass coordinates (density * dt), which
    is the natural metric for the optimizer's simplex steps.
    """
    raw = np.asarray(raw_density, dtype=np.float64)
    if raw.shape != (grid.n_steps,):
        raise ConfigError(f"raw density must have shape ({grid.n_steps},), got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ConfigError("raw density contains non-finite values")
    w = project_masses(raw * grid.dt)
    return SensorSchedule.from_masses(grid, w)


def schedule_mass(schedule: SensorSchedule, a: float, b: float) -> float:
    """Measurement mass placed on the window [a, b].

    The window is intersected with [0, t_end]; partial cell overlaps
    count proportionally.  Raises for a > b or non-finite endpoints.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ConfigError(f"window endpoints must be finite, got [{a}, {b}]")
    if a > b:
        raise ConfigError(f"empty window: a={a} > b={b}")
    grid = schedule.grid
    lo = np.clip(a, 0.0, grid.t_end)
    hi = np.clip(b, 0.0, grid.t_end)
    edges = grid.times
    overlap = np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1])
    overlap = np.maximum(overlap, 0.0)
    return float(np.sum(schedule.density * overlap))
