"""Numba switch.

Hot kernels are written twice: a loop version compiled with ``numba.njit`` and a
vectorised numpy version. ``MEMNAV_NUMBA=0`` (or a missing numba install)
selects the numpy path. The flag is read once at import time.
"""
from __future__ import annotations

import os

_flag = os.environ.get("MEMNAV_NUMBA", "1").strip().lower()

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

USE_NUMBA: bool = _numba is not None and _flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is enabled, otherwise a no-op decorator.

    The decorated function stays plain Python when disabled, so the loop
    version is still callable (slowly) and can be compared against the numpy
    path in tests.
    """
    kwargs.setdefault("cache", True)
    if _numba is None:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    return _numba.njit(*args, **kwargs)
