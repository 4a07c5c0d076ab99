"""Shared test helpers."""

import itertools

import numpy as np


def simplex_projection_bruteforce(v):
    """Exact Euclidean projection onto the unit simplex by KKT enumeration.

    For every nonempty support set S the KKT system gives the candidate
    w_i = v_i + (1 - sum_S v) / |S| on S and 0 elsewhere; the projection
    is the feasible candidate closest to v.  Exponential in len(v), so
    only usable for small vectors — which is the point: it is an oracle
    independent of the sort-and-threshold implementation.
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    best, best_d = None, np.inf
    for r in range(1, n + 1):
        for support in itertools.combinations(range(n), r):
            s = list(support)
            w = np.zeros(n)
            w[s] = v[s] + (1.0 - v[s].sum()) / r
            if np.any(w[s] < -1e-15):
                continue
            w = np.maximum(w, 0.0)
            d = float(np.sum((w - v) ** 2))
            if d < best_d - 1e-15:
                best, best_d = w, d
    return best
