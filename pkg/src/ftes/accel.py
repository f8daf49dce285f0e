"""Numba acceleration switch.

Hot kernels in this package ship in two flavors: an ``@njit``-compiled one
and a pure numpy/Python fallback.  The environment variable ``FTES_NUMBA``
selects the path: set ``FTES_NUMBA=0`` to force the fallback (useful for
debugging and for the benchmark in ``benchmarks/``), anything else (or
unset) uses numba when it imports cleanly.
"""

import os
import warnings


def _numba_requested() -> bool:
    return os.environ.get("FTES_NUMBA", "1") != "0"


NUMBA_AVAILABLE = False
if _numba_requested():
    try:
        import numba  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - numba is a hard dependency
        warnings.warn("numba import failed; falling back to pure numpy kernels")

USE_NUMBA = NUMBA_AVAILABLE and _numba_requested()


def njit_or_py(func):
    """Return (jitted, plain) pair for *func*; dispatch picks per USE_NUMBA."""
    if USE_NUMBA:
        import numba

        return numba.njit(cache=True)(func)
    return func


if NUMBA_AVAILABLE:
    from numba.extending import register_jitable
else:  # pragma: no cover - numba is a hard dependency

    def register_jitable(func=None, **kwargs):
        if func is None:
            return lambda g: g
        return func
