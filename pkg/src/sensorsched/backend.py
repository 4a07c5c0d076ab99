"""Kernel backend selection.

The hot loops in :mod:`sensorsched._kernels` ship in two forms: a
numba-compiled one and the plain numpy one (same source, undecorated).
The numpy path is selected when numba is not importable or when the
environment variable ``SENSORSCHED_DISABLE_NUMBA`` is set to ``1``
(or ``true``/``yes``).
"""

import os

_FLAG = os.environ.get("SENSORSCHED_DISABLE_NUMBA", "").strip().lower()
NUMBA_REQUESTED = _FLAG not in ("1", "true", "yes")

try:
    if not NUMBA_REQUESTED:
        raise ImportError("numba disabled by SENSORSCHED_DISABLE_NUMBA")
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - exercised via subprocess test
    _njit = None
    NUMBA_ENABLED = False


def jit_or_none(func):
    """Compile func if numba is importable at all (ignores the env flag).

    Used by the benchmark and the backend-equivalence tests, which want to
    compare both paths inside one process.
    """
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        return None
    return njit(cache=True)(func)
