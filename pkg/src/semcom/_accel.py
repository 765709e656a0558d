"""Numba switch.

Set ``SEMCOM_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
"""

import os

_DISABLED = os.environ.get("SEMCOM_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by SEMCOM_DISABLE_NUMBA")
    import numba

    HAVE_NUMBA = True
except ImportError:
    numba = None
    HAVE_NUMBA = False

NUMBA_OPTS = {"cache": True, "nogil": True}


def njit(func):
    """``numba.njit`` with package defaults, or ``None`` when numba is off."""
    if not HAVE_NUMBA:
        return None
    return numba.njit(func, **NUMBA_OPTS)
