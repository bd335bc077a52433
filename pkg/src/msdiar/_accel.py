"""Numba switch.

Set ``MSDIAR_DISABLE_NUMBA=1`` to force the pure-numpy code paths. The flag is
read once at import time.
"""

from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is an optional speedup
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and (
    os.environ.get("MSDIAR_DISABLE_NUMBA", "0").strip().lower() in _FALSY
)


def njit(fn):
    """Compile ``fn`` with numba when available, else return it unchanged."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True, nogil=True)(fn)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
