"""Numba switch.

Hot kernels are written once as plain loops and compiled with ``numba.njit``
unless ``FAIRRL_DISABLE_NUMBA=1`` is set (or numba is missing), in which case
callers dispatch to the vectorised numpy implementations instead.
"""
from __future__ import annotations

import os

# the bundled TBB is too old for numba; OpenMP avoids a warning on every import
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

_DISABLED = os.environ.get("FAIRRL_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

USE_NUMBA = HAS_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity otherwise."""
    if HAS_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)

    def wrap(fn):
        return fn

    if args and callable(args[0]):
        return args[0]
    return wrap


def set_threads(n: int | None) -> None:
    if n is None or not HAS_NUMBA:
        return
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
