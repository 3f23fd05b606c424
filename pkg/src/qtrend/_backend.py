"""Kernel backend selection.

Hot loops are compiled with numba when it is importable. Setting the
environment variable ``QTREND_DISABLE_NUMBA=1`` before import forces the
pure-numpy fallback path everywhere.
"""
import os

DISABLE_ENV = "QTREND_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a soft dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get(DISABLE_ENV, "").strip().lower() not in (
    "1", "true", "yes", "on")


def njit(func):
    """Compile ``func`` in nopython mode if numba is available.

    Without numba the plain Python function is returned so the module still
    imports; callers should route through the numpy fallbacks in that case.
    """
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
