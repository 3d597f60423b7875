"""Backend switch for the hot kernels.

Set ``PFHOM_DISABLE_NUMBA=1`` to force the pure-numpy fallback even when
numba is importable. The choice is made once at import time.
"""

from __future__ import annotations

import os

_flag = os.environ.get("PFHOM_DISABLE_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba

    USE_NUMBA = True
except ImportError:
    numba = None
    USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"


def maybe_njit(func):
    """``numba.njit(cache=True)`` when the numba backend is active, else identity."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func
