"""Scheduled linear-Gaussian filtering: covariance flow and matrix adjoint.

For linear signal / linear observation models the conditional law is
Gaussian and the error covariance obeys a Riccati equation weighted by the
sensor density::

    dC/dt = L C + C L' + Sigma - xi(t) C A(t) C,     A = H' Gamma^{-1} H

Utilities of the covariance path are differentiated through a backward
matrix equation

    -dLam/dt = L' Lam + Lam L - xi (A C Lam + Lam C A) + Du_int(C)

with ``Lam(T) = Du_final(C(T))``; the sensitivity density at a node is
``eta(t) = -<<Lam(t), C(t) A(t) C(t)>>`` in the Frobenius pairing, and the
per-cell gradient entry averages the two edge evaluations of the cell
(trapezoid rule, matching the finite-difference response of a cell mass).

Both equations are integrated with classical RK4 at half the cell width;
coefficients are tabulated per cell on a quarter-step grid, with each
cell's right edge sampled one-sidedly from inside the cell so coefficients
that jump exactly at a node (a switching observation matrix, say) never
leak across cell boundaries.  The covariance is kept on the half grid so
the backward pass sees accurate midpoints.

Derivative convention for matrix utilities: ``du(C)[i, j]`` is the
directional derivative along the symmetric pair direction (``e_i e_j' +
e_j e_i'`` off the diagonal, ``e_i e_i'`` on it).  Trace-family utilities
have diagonal derivatives, for which this coincides with the Frobenius
pairing used by the adjoint, making ``lg_gradient`` exact for them; the
log-determinant derivative follows the same pair convention
(``2 C^{-1} - C^{-1} o I``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, GridMismatchError, NumericsError
from .schedule import GradientField, SensorSchedule, TimeGrid
from .sde import ObservationPath

__all__ = [
    "frobenius",
    "LinearGaussianModel",
    "MatrixUtility",
    "CovariancePath",
    "MatrixAdjointPath",
    "integrate_riccati",
    "integrate_mean",
    "adjoint_matrix_backward",
    "lg_gradient",
    "utility_value",
    "utility_derivative",
]


def frobenius(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product <<A, B>> = trace(A' B)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ConfigError(f"frobenius: shapes differ, {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def _as_square(m, n: int, name: str, t: float) -> np.ndarray:
    out = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if out.shape != (n, n):
        raise ConfigError(f"{name}({t}) must have shape ({n}, {n}), got {out.shape}")
    return out


def _require_spd(m: np.ndarray, name: str):
    if not np.allclose(m, m.T, atol=1e-10):
        raise ConfigError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{name} must be positive definite") from None


@dataclass(frozen=True)
class LinearGaussianModel:
    """Linear SDE with linear scheduled observations.

    ``L``, ``Sigma``, ``H``, ``Gamma`` are callables of time returning
    matrices of shape (dim, dim), (dim, dim), (obs_dim, dim) and
    (obs_dim, obs_dim); ``m0`` / ``C0`` give the Gaussian prior.
    """

    dim: int
    obs_dim: int
    L: Callable[[float], np.ndarray]
    Sigma: Callable[[float], np.ndarray]
    H: Callable[[float], np.ndarray]
    Gamma: Callable[[float], np.ndarray]
    m0: np.ndarray
    C0: np.ndarray

    def __post_init__(self):
        if self.dim < 1 or self.obs_dim < 1:
            raise ConfigError("dim and obs_dim must be positive")
        m0 = np.asarray(self.m0, dtype=np.float64).reshape(-1)
        if m0.shape != (self.dim,):
            raise ConfigError(f"m0 must have {self.dim} entries, got shape {m0.shape}")
        C0 = np.atleast_2d(np.asarray(self.C0, dtype=np.float64))
        if C0.shape != (self.dim, self.dim):
            raise ConfigError(f"C0 must have shape ({self.dim}, {self.dim})")
        _require_spd(C0, "C0")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "C0", C0)
        # evaluate once so shape errors surface at construction
        self.obs_precision_map(0.0)
        _as_square(self.Sigma(0.0), self.dim, "Sigma", 0.0)

    def H_at(self, t: float) -> np.ndarray:
        h = np.atleast_2d(np.asarray(self.H(t), dtype=np.float64))
        if h.shape != (self.obs_dim, self.dim):
            raise ConfigError(f"H({t}) must have shape ({self.obs_dim}, {self.dim})")
        return h

    def gamma_at(self, t: float) -> np.ndarray:
        g = _as_square(self.Gamma(t), self.obs_dim, "Gamma", t)
        _require_spd(g, f"Gamma({t})")
        return g

    def obs_precision_map(self, t: float) -> np.ndarray:
        """A(t) = H(t)' Gamma(t)^{-1} H(t)."""
        h = self.H_at(t)
        return h.T @ np.linalg.solve(self.gamma_at(t), h)


_CHECK_C = np.array([[1.3, 0.4], [0.4, 0.9]])


def _pair_direction(n: int, i: int, j: int) -> np.ndarray:
    s = np.zeros((n, n))
    s[i, j] += 1.0
    s[j, i] += 1.0
    if i == j:
        s[i, i] = 1.0
    return s


def _spot_check_matrix_derivative(u, du, name: str, tol: float = 1e-6):
    """Central-difference check of du against u along the pair basis."""
    c = _CHECK_C
    n = c.shape[0]
    an = np.asarray(du(c), dtype=float)
    if an.shape != (n, n):
        raise ConfigError(f"{name}: derivative must return a matrix matching its argument")
    h = 1e-6
    for i in range(n):
        for j in range(i, n):
            s = _pair_direction(n, i, j)
            fd = (float(u(c + h * s)) - float(u(c - h * s))) / (2.0 * h)
            if abs(an[i, j] - fd) > tol * max(1.0, abs(fd)):
                raise ConfigError(
                    f"{name}: derivative disagrees with finite differences at entry "
                    f"({i}, {j}): {an[i, j]:.9g} vs {fd:.9g}"
                )


class MatrixUtility:
    """Scalar criterion of the covariance path with its matrix derivatives.

    Final and running parts are optional callables ``u(C) -> float`` with
    derivatives ``du(C) -> matrix`` in the pair convention described in the
    module docstring.  Every derivative is finite-difference spot-checked
    once at construction.
    """

    def __init__(self, label, u_final=None, du_final=None, u_int=None, du_int=None):
        if (u_final is None) != (du_final is None):
            raise ConfigError("u_final and du_final must be supplied together")
        if (u_int is None) != (du_int is None):
            raise ConfigError("u_int and du_int must be supplied together")
        if u_final is None and u_int is None:
            raise ConfigError("a utility needs at least one of u_final, u_int")
        self.label = label
        self.u_final = u_final
        self.du_final = du_final
        self.u_int = u_int
        self.du_int = du_int
        if u_final is not None:
            _spot_check_matrix_derivative(u_final, du_final, f"{label}: u_final")
        if u_int is not None:
            _spot_check_matrix_derivative(u_int, du_int, f"{label}: u_int")

    @staticmethod
    def trace_final() -> "MatrixUtility":
        """Total variance at the final time (A-optimality)."""
        return MatrixUtility(
            "trace_final",
            u_final=lambda c: float(np.trace(c)),
            du_final=lambda c: np.eye(c.shape[0]),
        )

    @staticmethod
    def logdet_final() -> "MatrixUtility":
        """Log-determinant of the final covariance (D-optimality)."""

        def u(c):
            sign, ld = np.linalg.slogdet(c)
            if sign <= 0:
                raise NumericsError("log-determinant requires a positive definite matrix")
            return float(ld)

        def du(c):
            inv = np.linalg.inv(c)
            return 2.0 * inv - np.diag(np.diag(inv))

        return MatrixUtility("logdet_final", u_final=u, du_final=du)

    @staticmethod
    def trace_integrated() -> "MatrixUtility":
        """Time-integrated total variance."""
        return MatrixUtility(
            "trace_integrated",
            u_int=lambda c: float(np.trace(c)),
            du_int=lambda c: np.eye(c.shape[0]),
        )

    @staticmethod
    def custom(label, u_final=None, du_final=None, u_int=None, du_int=None) -> "MatrixUtility":
        return MatrixUtility(label, u_final, du_final, u_int, du_int)

    @staticmethod
    def weighted(terms: Sequence[tuple]) -> "MatrixUtility":
        """Linear combination [(coeff, utility), ...]."""
        terms = [(float(c), u) for c, u in terms]
        if not terms:
            raise ConfigError("weighted utility needs at least one term")
        finals = [(c, u) for c, u in terms if u.u_final is not None]
        ints = [(c, u) for c, u in terms if u.u_int is not None]
        kw = {}
        if finals:
            kw["u_final"] = lambda m: sum(c * u.u_final(m) for c, u in finals)
            kw["du_final"] = lambda m: sum(c * u.du_final(m) for c, u in finals)
        if ints:
            kw["u_int"] = lambda m: sum(c * u.u_int(m) for c, u in ints)
            kw["du_int"] = lambda m: sum(c * u.du_int(m) for c, u in ints)
        label = " + ".join(f"{c:g}*{u.label}" for c, u in terms)
        return MatrixUtility(label, **kw)


@dataclass(eq=False)
class CovariancePath:
    """Covariance trajectory on the time-grid nodes (optionally with mean)."""

    grid: TimeGrid
    C: np.ndarray
    mean: Optional[np.ndarray] = None
    _C_half: Optional[np.ndarray] = field(default=None, repr=False)
    _tabs: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.C, dtype=np.float64)
        if c.ndim != 3 or c.shape[0] != self.grid.n_steps + 1 or c.shape[1] != c.shape[2]:
            raise ConfigError(
                f"C must have shape (n_steps + 1, dim, dim), got {c.shape}"
            )
        self.C = c

    @property
    def dim(self) -> int:
        return self.C.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.C[-1]


@dataclass(eq=False)
class MatrixAdjointPath:
    """Backward matrix-sensitivity trajectory on the time-grid nodes."""

    grid: TimeGrid
    Lambda: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.Lambda, dtype=np.float64)
        if lam.ndim != 3 or lam.shape[0] != self.grid.n_steps + 1 or lam.shape[1] != lam.shape[2]:
            raise ConfigError(
                f"Lambda must have shape (n_steps + 1, dim, dim), got {lam.shape}"
            )
        self.Lambda = lam


def _tabulate_lg(model: LinearGaussianModel, grid: TimeGrid) -> dict:
    """Coefficient tables: per-cell quarter rows for the ODE kernels, nodes for the mean.

    Cell k owns rows 5k..5k+4 at times t_k + j dt/4; the right edge row
    (j = 4) is sampled just inside the cell, so a coefficient that jumps
    exactly at a node keeps its left limit within the cell that ends there
    while the next cell starts from the fresh value.
    """
    n = grid.n_steps
    d, dy = model.dim, model.obs_dim
    offsets = np.array([0.0, 0.25, 0.5, 0.75, 1.0 - 1e-9]) * grid.dt
    tq = (grid.times[:n, None] + offsets[None, :]).ravel()
    nq = tq.shape[0]
    L_q = np.empty((nq, d, d))
    Sig_q = np.empty((nq, d, d))
    A_q = np.empty((nq, d, d))
    for q, t in enumerate(tq):
        L_q[q] = _as_square(model.L(t), d, "L", t)
        Sig_q[q] = _as_square(model.Sigma(t), d, "Sigma", t)
        h = model.H_at(t)
        A_q[q] = h.T @ np.linalg.solve(model.gamma_at(t), h)
    H_n = np.empty((n + 1, dy, d))
    HtGi_n = np.empty((n + 1, d, dy))
    for k, t in enumerate(grid.times):
        h = model.H_at(t)
        H_n[k] = h
        HtGi_n[k] = np.linalg.solve(model.gamma_at(t), h).T
    for name, arr in (("L", L_q), ("Sigma", Sig_q), ("H'Gamma^{-1}H", A_q)):
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"{name} produced non-finite values on the time grid")
    return {
        "L_q": L_q,
        "LT_q": np.ascontiguousarray(np.swapaxes(L_q, 1, 2)),
        "Sig_q": Sig_q,
        "A_q": A_q,
        "H_n": H_n,
        "HtGi_n": HtGi_n,
    }


def integrate_riccati(model: LinearGaussianModel, schedule: SensorSchedule) -> CovariancePath:
    """Covariance flow under a sensor schedule (RK4, half-step internal grid).

    Raises :class:`NumericsError` if the trajectory leaves the finite range
    or an eigenvalue drops below -1e-8 (loss of positive semidefiniteness
    beyond roundoff).
    """
    grid = schedule.grid
    tabs = _tabulate_lg(model, grid)
    c_half, bad = _kernels.riccati_forward(
        np.ascontiguousarray(model.C0),
        tabs["L_q"],
        tabs["LT_q"],
        tabs["Sig_q"],
        tabs["A_q"],
        schedule.density,
        grid.dt,
    )
    if bad >= 0:
        t_bad = 0.5 * grid.dt * (bad + 1)
        raise NumericsError(f"covariance flow became non-finite near t = {t_bad:.6g}")
    c_nodes = np.ascontiguousarray(c_half[::2])
    eigs = np.linalg.eigvalsh(c_nodes)
    if float(eigs.min()) < -1e-8:
        k = int(np.argmin(eigs.min(axis=1)))
        raise NumericsError(
            f"covariance lost positive semidefiniteness at t = {grid.times[k]:.6g} "
            f"(min eigenvalue {eigs.min():.3g})"
        )
    path = CovariancePath(grid, c_nodes)
    path._C_half = c_half
    path._tabs = tabs
    return path


def integrate_mean(
    model: LinearGaussianModel,
    schedule: SensorSchedule,
    obs_path: ObservationPath,
    cov: Optional[CovariancePath] = None,
) -> np.ndarray:
    """Conditional mean along observed increments; returns (n_steps + 1, dim).

    The gain uses the schedule's own covariance flow (computed here unless
    ``cov`` is supplied).  The result is also stored on the covariance path.
    """
    grid = schedule.grid
    if obs_path.grid != grid:
        raise GridMismatchError("observation path and schedule use different time grids")
    if obs_path.increments.shape[1] != model.obs_dim:
        raise ConfigError(
            f"observation path has {obs_path.increments.shape[1]} channels, "
            f"model expects {model.obs_dim}"
        )
    if cov is None:
        cov = integrate_riccati(model, schedule)
    elif cov.grid != grid:
        raise GridMismatchError("covariance path and schedule use different time grids")
    tabs = cov._tabs if cov._tabs is not None else _tabulate_lg(model, grid)
    m = _kernels.mean_forward(
        model.m0.copy(),
        cov.C,
        np.ascontiguousarray(tabs["L_q"][::5]),
        tabs["HtGi_n"],
        tabs["H_n"],
        np.ascontiguousarray(obs_path.increments),
        schedule.density,
        grid.dt,
    )
    if not np.all(np.isfinite(m)):
        raise NumericsError("conditional-mean integration produced non-finite values")
    cov.mean = m
    return m


def adjoint_matrix_backward(
    cov: CovariancePath,
    schedule: SensorSchedule,
    model: LinearGaussianModel,
    utility: MatrixUtility,
) -> MatrixAdjointPath:
    """Backward matrix sensitivity along a covariance path."""
    grid = schedule.grid
    if cov.grid != grid:
        raise GridMismatchError("covariance path and schedule use different time grids")
    if cov._C_half is None:
        raise ConfigError(
            "covariance path lacks the half-step trajectory; "
            "build it with integrate_riccati"
        )
    tabs = cov._tabs if cov._tabs is not None else _tabulate_lg(model, grid)
    d = cov.dim
    if utility.du_final is not None:
        lam_T = np.asarray(utility.du_final(cov.final), dtype=np.float64)
    else:
        lam_T = np.zeros((d, d))
    n_half = cov._C_half.shape[0]
    du_half = np.zeros((n_half, d, d))
    if utility.du_int is not None:
        for m in range(n_half):
            du_half[m] = np.asarray(utility.du_int(cov._C_half[m]), dtype=np.float64)
    lam = _kernels.lg_adjoint_backward(
        np.ascontiguousarray(lam_T),
        cov._C_half,
        tabs["L_q"],
        tabs["LT_q"],
        tabs["A_q"],
        schedule.density,
        du_half,
        grid.dt,
    )
    if not np.all(np.isfinite(lam)):
        raise NumericsError("matrix adjoint integration produced non-finite values")
    return MatrixAdjointPath(grid, lam)


def lg_gradient(
    adj: MatrixAdjointPath,
    cov: CovariancePath,
    model: LinearGaussianModel,
) -> GradientField:
    """Per-cell utility sensitivity from the matrix adjoint.

    The sensitivity density at a node is eta(t) = -<<Lam(t), C(t) A(t) C(t)>>;
    the cell entry is the trapezoid average of the cell's two edge values,
    with A sampled one-sidedly from inside the cell (consistently with the
    forward tabulation).  Exact up to the RK4/trapezoid discretization for
    utilities whose derivative matrices coincide with the Frobenius-pairing
    derivative, i.e. the trace family.
    """
    grid = cov.grid
    if adj.grid != grid:
        raise GridMismatchError("adjoint and covariance paths use different time grids")
    tabs = cov._tabs if cov._tabs is not None else _tabulate_lg(model, grid)
    a_left = tabs["A_q"][0::5]
    a_right = tabs["A_q"][4::5]
    c_l, c_r = cov.C[:-1], cov.C[1:]
    lam_l, lam_r = adj.Lambda[:-1], adj.Lambda[1:]
    f_left = -np.einsum("kij,kij->k", lam_l, c_l @ a_left @ c_l)
    f_right = -np.einsum("kij,kij->k", lam_r, c_r @ a_right @ c_r)
    return GradientField(grid, 0.5 * (f_left + f_right))


def utility_value(cov: CovariancePath, utility: MatrixUtility) -> float:
    """Final term plus trapezoid-in-time running term along the path."""
    total = 0.0
    if utility.u_final is not None:
        total += float(utility.u_final(cov.final))
    if utility.u_int is not None:
        per_node = np.array([float(utility.u_int(ck)) for ck in cov.C])
        total += float(np.trapezoid(per_node, dx=cov.grid.dt))
    return total


def utility_derivative(C: np.ndarray, utility: MatrixUtility) -> np.ndarray:
    """Derivative matrix of the final criterion at ``C`` (zeros if none)."""
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    if utility.du_final is None:
        return np.zeros_like(C)
    return np.asarray(utility.du_final(C), dtype=np.float64)
