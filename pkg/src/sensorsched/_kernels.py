"""Hot numerical loops.

Every kernel here is written against the numba-supported numpy subset and
is compiled with ``@njit`` when the numba backend is active (see
:mod:`sensorsched.backend`).  On the pure-numpy path the very same
functions run undecorated.  Both paths stay importable side by side for
the benchmark and the equivalence tests (``KERNELS_NUMPY`` /
``compile_numba_kernels``).

Conventions shared by the PDE kernels (1-d space, explicit Euler in time):

* space grid: ``nx`` nodes, spacing ``dx``, zero-flux boundaries;
* time grid: ``n_steps`` cells of width ``dt``; cell ``k`` covers
  ``[t_k, t_k + dt)`` and carries the coefficient rows evaluated at
  ``t_k``;
* densities are propagated in log form; the generator term is evaluated
  on ``p = exp(logp - max logp)``, which leaves the ratio ``L*p / p``
  invariant under the shift;
* advection uses first-order upwind face values, diffusion central
  differences, both assembled as face fluxes so that the discrete mass
  (plain node sum) is conserved exactly.

The matrix kernels integrate the scheduled Riccati / adjoint ODEs with
classical fixed-step RK4.  Coefficient callables are pre-tabulated by the
wrappers on a per-cell quarter grid: cell ``k`` owns rows ``5k .. 5k+4``
(left edge, three interior quarter points, right edge), with the right
edge sampled one-sidedly from inside the cell so coefficients that jump
exactly at a node never leak across cell boundaries.  Every RK4 stage
reads an exactly-placed row; the covariance is returned on the half-step
grid (``2 n_steps + 1`` points) because the backward adjoint pass needs
accurate midpoint values.
"""

import numpy as np

from .backend import NUMBA_ENABLED, jit_or_none


def _zakai_forward(logp0, src, f, sig2, dt, dx):
    """March the log-density forward; returns (trajectory, bad_step).

    src[k] must already contain the full observation contribution of cell
    k (quadratic penalty plus data increment).  bad_step is the first
    cell index that produced a non-finite value, or -1 on a clean run.
    """
    n_steps = src.shape[0]
    nx = logp0.shape[0]
    traj = np.full((n_steps + 1, nx), np.nan)
    traj[0] = logp0
    cur = logp0.copy()
    flux = np.zeros(nx + 1)
    for k in range(n_steps):
        p = np.exp(cur - cur.max())
        ff = 0.5 * (f[k, :-1] + f[k, 1:])
        p_up = np.where(ff > 0.0, p[:-1], p[1:])
        flux[1:nx] = ff * p_up - 0.5 * sig2[k] * (p[1:] - p[:-1]) / dx
        lstar = -(flux[1:] - flux[:-1]) / dx
        # freeze the generator ratio on nodes whose mass underflowed
        cur = cur + (lstar / np.maximum(p, 1e-12)) * dt + src[k]
        if not np.isfinite(cur).all():
            return traj, k
        traj[k + 1] = cur
    return traj, -1


def _adjoint_backward(lam_T, logp_traj, f, sig2, src, dt, dx):
    """March the adjoint field backward from t = T to t = 0.

    Discretizes -dlam/dt = src + div(lam [f - Sig dlogp] + 0.5 Sig dlam)
    with one explicit Euler step per cell, evaluating the right-hand side
    at the cell's right edge.  src[k] holds the interior-utility source
    at node k (zeros when there is none).  Zero-flux faces make the plain
    sum of lam invariant when src vanishes.

    The face velocity f - Sig dlogp is clipped to the stable range
    +-dx/dt: log-density tails pinned at the evaluation floor carry
    arbitrarily steep, meaningless gradients that would otherwise drive
    an exponential instability, while in the resolved region (where the
    adjoint carries its mass) the velocity stays well inside the clip.
    """
    n_steps = logp_traj.shape[0] - 1
    nx = lam_T.shape[0]
    v_max = dx / dt
    traj = np.empty((n_steps + 1, nx))
    traj[n_steps] = lam_T
    cur = lam_T.copy()
    flux = np.zeros(nx + 1)
    for k in range(n_steps - 1, -1, -1):
        lp = logp_traj[k + 1]
        ff = 0.5 * (f[k, :-1] + f[k, 1:])
        v = ff - sig2[k] * (lp[1:] - lp[:-1]) / dx
        v = np.minimum(np.maximum(v, -v_max), v_max)
        # backward-time advection: the upwind side is reversed
        lam_up = np.where(v > 0.0, cur[1:], cur[:-1])
        flux[1:nx] = v * lam_up + 0.5 * sig2[k] * (cur[1:] - cur[:-1]) / dx
        div = (flux[1:] - flux[:-1]) / dx
        cur = cur + dt * (div + src[k + 1])
        traj[k] = cur
    return traj


def _riccati_forward(C0, L_q, LT_q, Sig_q, A_q, xi, dt):
    """Integrate dC/dt = L C + C L' + Sig - xi C A C with RK4 half-steps.

    Coefficient arrays live on the per-cell quarter grid (5 n rows, cell k
    at rows 5k..5k+4); the returned trajectory lives on the half grid
    (2 n + 1 entries).  Returns (C_half, bad_step) with bad_step = -1 on
    success, else the half-step index that went non-finite.

    The right-hand side is written as explicit index loops with shared
    scratch storage: the matrices are small (state dimension), so avoiding
    per-stage allocations and BLAS dispatch is what makes the thousands of
    solves behind finite-difference validation affordable.
    """
    n_half = 2 * xi.shape[0]
    n = C0.shape[0]
    out = np.full((n_half + 1, n, n), np.nan)
    out[0] = C0
    C = C0.copy()
    ca = np.empty((n, n))
    stage = np.empty((n, n))
    ks = np.empty((4, n, n))
    h = 0.5 * dt

    def rhs_into(M, q, xi_k, dst):
        # dst = L M + M L' + Sig - xi_k * (M A) M
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc += M[i, l] * A_q[q, l, j]
                ca[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = Sig_q[q, i, j]
                for l in range(n):
                    acc += L_q[q, i, l] * M[l, j] + M[i, l] * LT_q[q, l, j]
                    acc -= xi_k * ca[i, l] * M[l, j]
                dst[i, j] = acc

    for m in range(n_half):
        xi_k = xi[m // 2]
        b = 5 * (m // 2) + 2 * (m % 2)
        rhs_into(C, b, xi_k, ks[0])
        for i in range(n):
            for j in range(n):
                stage[i, j] = C[i, j] + 0.5 * h * ks[0, i, j]
        rhs_into(stage, b + 1, xi_k, ks[1])
        for i in range(n):
            for j in range(n):
                stage[i, j] = C[i, j] + 0.5 * h * ks[1, i, j]
        rhs_into(stage, b + 1, xi_k, ks[2])
        for i in range(n):
            for j in range(n):
                stage[i, j] = C[i, j] + h * ks[2, i, j]
        rhs_into(stage, b + 2, xi_k, ks[3])
        for i in range(n):
            for j in range(n):
                C[i, j] += (h / 6.0) * (
                    ks[0, i, j] + 2.0 * ks[1, i, j] + 2.0 * ks[2, i, j] + ks[3, i, j]
                )
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.5 * (C[i, j] + C[j, i])
                C[i, j] = s
                C[j, i] = s
        if not np.isfinite(C).all():
            return out, m
        out[m + 1] = C
    return out, -1


def _lg_adjoint_backward(Lam_T, C_half, L_q, LT_q, A_q, xi, dU_half, dt):
    """March -dLam/dt = L'Lam + Lam L - xi(A C Lam + Lam C A) + dU backward.

    One RK4 step per time cell, stages at the cell's right edge, midpoint
    (twice) and left edge; C and dU come from the half grid, L and A from
    the per-cell quarter grid.  Returns node values (n_steps + 1, n, n).
    Loop structure mirrors the forward Riccati kernel (see the note there).
    """
    n_steps = xi.shape[0]
    n = Lam_T.shape[0]
    out = np.empty((n_steps + 1, n, n))
    out[n_steps] = Lam_T
    Lam = Lam_T.copy()
    ca = np.empty((n, n))
    stage = np.empty((n, n))
    fs = np.empty((4, n, n))

    def rhs_into(M, ch, q, xi_k, dst):
        # dst = L' M + M L - xi_k ((C A)' M + M (C A)) + dU
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for l in range(n):
                    acc += C_half[ch, i, l] * A_q[q, l, j]
                ca[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = dU_half[ch, i, j]
                for l in range(n):
                    acc += LT_q[q, i, l] * M[l, j] + M[i, l] * L_q[q, l, j]
                    acc -= xi_k * (ca[l, i] * M[l, j] + M[i, l] * ca[l, j])
                dst[i, j] = acc

    for k in range(n_steps - 1, -1, -1):
        xi_k = xi[k]
        hi, mid, lo = 2 * k + 2, 2 * k + 1, 2 * k
        rhs_into(Lam, hi, 5 * k + 4, xi_k, fs[0])
        for i in range(n):
            for j in range(n):
                stage[i, j] = Lam[i, j] + 0.5 * dt * fs[0, i, j]
        rhs_into(stage, mid, 5 * k + 2, xi_k, fs[1])
        for i in range(n):
            for j in range(n):
                stage[i, j] = Lam[i, j] + 0.5 * dt * fs[1, i, j]
        rhs_into(stage, mid, 5 * k + 2, xi_k, fs[2])
        for i in range(n):
            for j in range(n):
                stage[i, j] = Lam[i, j] + dt * fs[2, i, j]
        rhs_into(stage, lo, 5 * k, xi_k, fs[3])
        for i in range(n):
            for j in range(n):
                Lam[i, j] += (dt / 6.0) * (
                    fs[0, i, j] + 2.0 * fs[1, i, j] + 2.0 * fs[2, i, j] + fs[3, i, j]
                )
        for i in range(n):
            for j in range(i + 1, n):
                s = 0.5 * (Lam[i, j] + Lam[j, i])
                Lam[i, j] = s
                Lam[j, i] = s
        out[k] = Lam
    return out


def _mean_forward(m0, C_nodes, L_nodes, HtGi_nodes, H_nodes, dz, xi, dt):
    """Euler march of the scheduled conditional-mean SDE.

    dm = L m dt + C H' Gam^{-1} (dZ - H m xi dt); row k of every
    coefficient array is evaluated at t_k, HtGi_nodes[k] is
    H(t_k)' Gam(t_k)^{-1}.
    """
    n_steps = xi.shape[0]
    n = m0.shape[0]
    out = np.empty((n_steps + 1, n))
    out[0] = m0
    m = m0.copy()
    for k in range(n_steps):
        innov = dz[k] - (H_nodes[k] @ m) * (xi[k] * dt)
        gain = C_nodes[k] @ HtGi_nodes[k]
        m = m + (L_nodes[k] @ m) * dt + gain @ innov
        out[k + 1] = m
    return out


KERNELS_NUMPY = {
    "zakai_forward": _zakai_forward,
    "adjoint_backward": _adjoint_backward,
    "riccati_forward": _riccati_forward,
    "lg_adjoint_backward": _lg_adjoint_backward,
    "mean_forward": _mean_forward,
}

_numba_cache = None


def compile_numba_kernels():
    """Compile every kernel with numba regardless of the env flag.

    Returns a name->function dict, or None when numba is unavailable.
    Used by the selected-path bindings below, the benchmark and the
    backend-equivalence tests.
    """
    global _numba_cache
    if _numba_cache is None:
        compiled = {}
        for name, fn in KERNELS_NUMPY.items():
            jitted = jit_or_none(fn)
            if jitted is None:
                return None
            compiled[name] = jitted
        _numba_cache = compiled
    return _numba_cache


if NUMBA_ENABLED:
    _active = compile_numba_kernels()
else:
    _active = KERNELS_NUMPY

zakai_forward = _active["zakai_forward"]
adjoint_backward = _active["adjoint_backward"]
riccati_forward = _active["riccati_forward"]
lg_adjoint_backward = _active["lg_adjoint_backward"]
mean_forward = _active["mean_forward"]
