"""numba shim.

Kernels are plain Python functions decorated with :func:`njit`.  Setting
``SAIMC_DISABLE_NUMBA=1`` before import (or running without numba installed)
leaves them as ordinary Python, which is the reference fallback.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

DISABLED = numba is None or os.environ.get("SAIMC_DISABLE_NUMBA", "") not in ("", "0")


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` unless numba is disabled."""
    def wrap(f):
        if DISABLED:
            return f
        return numba.njit(cache=True, **kwargs)(f)

    if func is None:
        return wrap
    return wrap(func)


def backend() -> str:
    return "python" if DISABLED else "numba"
