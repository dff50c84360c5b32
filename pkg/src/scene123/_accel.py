"""Numba switch for the hot kernels.

Set ``SCENE123_DISABLE_NUMBA=1`` before import to force the pure-numpy
paths.  When numba is not installed the numpy paths are used silently.
"""

import os

_FLAG = os.environ.get("SCENE123_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching, or a no-op when numba is off."""
    if not USE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    import numba

    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
