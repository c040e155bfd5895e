"""Numba switch.

Hot kernels are written twice: an ``@njit`` loop version and a vectorized
numpy version. ``USE_NUMBA`` picks which one the public functions call.
Set ``SIGR_NUMBA=0`` to force the numpy path.
"""
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("SIGR_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` or a no-op decorator when numba is missing."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def pick(numba_impl, numpy_impl):
    return numba_impl if USE_NUMBA else numpy_impl
