"""Signal and scheduled-observation simulation.

The signal is an Ito diffusion dX = f(X, t) dt + B(t) dW integrated with
Euler-Maruyama on the schedule's time grid.  Observations accumulate at
the rate prescribed by the schedule density xi:

    dZ = g(X, t) xi(t) dt + sqrt(xi(t)) Gamma(t)^{1/2} dV,

discretized per cell as

    dZ_k = g(X_k, t_k) xi_k dt + sqrt(xi_k dt) Gamma(t_k)^{1/2} eps_k.

Cells with xi_k = 0 therefore contribute exactly zero increments, and the
covariance of the accumulated noise equals the schedule-weighted integral
of Gamma.  Noise draws are made for every cell regardless of xi so that a
fixed seed yields common random numbers across schedule perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, GridMismatchError, NumericsError
from .schedule import SensorSchedule, TimeGrid

__all__ = [
    "SignalModel",
    "ObservationModel",
    "SignalPath",
    "ObservationPath",
    "simulate_signal",
    "simulate_observations",
    "empirical_increment_covariance",
]


@dataclass(frozen=True)
class SignalModel:
    """Diffusion signal dX = drift(X, t) dt + diffusion_sqrt(t) dW.

    drift maps (state, t) to a state-shaped array; diffusion_sqrt maps t
    to the (dim, n_noise) noise loading matrix; initial_sampler draws the
    starting state from the prior using the supplied generator.
    """

    dim: int
    drift: Callable[[np.ndarray, float], np.ndarray]
    diffusion_sqrt: Callable[[float], np.ndarray]
    initial_sampler: Callable[[np.random.Generator], np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"signal dimension must be >= 1, got {self.dim}")


@dataclass(frozen=True)
class ObservationModel:
    """Observation function g and noise covariance Gamma (SPD for all t)."""

    obs_dim: int
    g: Callable[[np.ndarray, float], np.ndarray]
    gamma: Callable[[float], np.ndarray]

    def __post_init__(self):
        if self.obs_dim < 1:
            raise ConfigError(f"observation dimension must be >= 1, got {self.obs_dim}")

    def gamma_at(self, t: float) -> np.ndarray:
        gam = np.asarray(self.gamma(t), dtype=np.float64)
        if gam.shape != (self.obs_dim, self.obs_dim):
            raise ConfigError(f"Gamma({t}) has shape {gam.shape}, expected {(self.obs_dim, self.obs_dim)}")
        return gam

    def gamma_sqrt(self, t: float) -> np.ndarray:
        """Matrix square root of Gamma(t); rejects indefinite noise.

        Positive-definite noise takes the Cholesky route; the
        positive-semidefinite boundary (an exactly noiseless channel,
        say) falls back to a symmetric eigenvalue square root.
        """
        gam = self.gamma_at(t)
        try:
            return np.linalg.cholesky(gam)
        except np.linalg.LinAlgError:
            pass
        if not np.allclose(gam, gam.T, atol=1e-12):
            raise ConfigError(f"Gamma({t}) is not symmetric")
        vals, vecs = np.linalg.eigh(gam)
        if vals.min() < -1e-12 * max(1.0, vals.max()):
            raise ConfigError(f"Gamma({t}) is not positive semidefinite")
        return (vecs * np.sqrt(np.maximum(vals, 0.0))) @ vecs.T

    def gamma_inv(self, t: float) -> np.ndarray:
        gam = self.gamma_at(t)
        try:
            return np.linalg.inv(gam)
        except np.linalg.LinAlgError as exc:
            raise ConfigError(f"Gamma({t}) is singular") from exc


@dataclass(frozen=True, eq=False)
class SignalPath:
    grid: TimeGrid
    states: np.ndarray = field(repr=False)  # (n_steps + 1, dim), row k at t_k

    def __post_init__(self):
        s = np.ascontiguousarray(self.states, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != self.grid.n_steps + 1:
            raise ConfigError(
                f"states must have shape ({self.grid.n_steps + 1}, dim), got {s.shape}"
            )
        if not np.all(np.isfinite(s)):
            raise NumericsError("signal path contains non-finite states")
        object.__setattr__(self, "states", s)


@dataclass(frozen=True, eq=False)
class ObservationPath:
    grid: TimeGrid
    increments: np.ndarray = field(repr=False)  # (n_steps, obs_dim), row k = dZ over cell k

    def __post_init__(self):
        z = np.ascontiguousarray(self.increments, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] != self.grid.n_steps:
            raise ConfigError(
                f"increments must have shape ({self.grid.n_steps}, obs_dim), got {z.shape}"
            )
        if not np.all(np.isfinite(z)):
            raise NumericsError("observation path contains non-finite increments")
        object.__setattr__(self, "increments", z)


def simulate_signal(model: SignalModel, grid: TimeGrid, seed) -> SignalPath:
    """Euler-Maruyama path of the signal on the grid nodes.

    The generator draws the initial state first and then one standard
    normal block per cell, so identical seeds give bit-identical paths.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(model.initial_sampler(rng), dtype=np.float64).reshape(model.dim)
    b0 = np.atleast_2d(np.asarray(model.diffusion_sqrt(0.0), dtype=np.float64))
    n_noise = b0.shape[1]
    dt = grid.dt
    sq_dt = np.sqrt(dt)
    eps = rng.standard_normal((grid.n_steps, n_noise))
    states = np.empty((grid.n_steps + 1, model.dim))
    states[0] = x
    times = grid.times
    for k in range(grid.n_steps):
        t = times[k]
        f = np.asarray(model.drift(x, t), dtype=np.float64).reshape(model.dim)
        b = np.atleast_2d(np.asarray(model.diffusion_sqrt(t), dtype=np.float64))
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(b))):
            raise NumericsError(f"signal drift/diffusion became non-finite at t={t:.6g}")
        x = x + f * dt + b @ (sq_dt * eps[k])
        states[k + 1] = x
    return SignalPath(grid, states)


def simulate_observations(
    path: SignalPath,
    obs: ObservationModel,
    schedule: SensorSchedule,
    seed,
) -> ObservationPath:
    """Scheduled observation increments along a fixed signal path."""
    if path.grid != schedule.grid:
        raise GridMismatchError("signal path and schedule use different time grids")
    grid = path.grid
    dt = grid.dt
    xi = schedule.density
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((grid.n_steps, obs.obs_dim))
    dz = np.empty((grid.n_steps, obs.obs_dim))
    times = grid.times
    for k in range(grid.n_steps):
        t = times[k]
        gval = np.asarray(obs.g(path.states[k], t), dtype=np.float64).reshape(obs.obs_dim)
        root = obs.gamma_sqrt(t)
        dz[k] = gval * (xi[k] * dt) + np.sqrt(xi[k] * dt) * (root @ eps[k])
    return ObservationPath(grid, dz)


def empirical_increment_covariance(paths: list[ObservationPath]) -> np.ndarray:
    """Unbiased sample covariance of the accumulated increments at t_end.

    The inputs are expected to be noise-only paths (drift part already
    absent or subtracted); the result estimates the schedule-weighted
    noise covariance integral(Gamma dxi).
    """
    if len(paths) < 2:
        raise ConfigError("need at least two paths to estimate a covariance")
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid != grid:
            raise GridMismatchError("observation paths use different time grids")
    totals = np.stack([p.increments.sum(axis=0) for p in paths])
    centered = totals - totals.mean(axis=0)
    return (centered.T @ centered) / (len(paths) - 1)
