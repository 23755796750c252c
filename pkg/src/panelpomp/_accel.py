"""Numba switch.

Set ``PANELPOMP_DISABLE_NUMBA=1`` to route every kernel through its pure
numpy implementation. The flag is read once, at import time.
"""
import os

_FLAG = os.environ.get("PANELPOMP_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with nogil/cache defaults; identity when numba is absent."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
