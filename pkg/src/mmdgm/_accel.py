"""Backend selection for the compiled kernels.

Set ``MMDGM_DISABLE_NUMBA=1`` to force the pure-numpy path. The flag is read
once, at import time.
"""
import os

_DISABLED = os.environ.get("MMDGM_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba
except ImportError:
    _numba = None

USE_NUMBA = _numba is not None


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise compile nothing.

    The wrapped function is returned unchanged in the fallback case so the same
    loop-style source still runs (slowly) under plain Python.
    """
    if _numba is not None:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
