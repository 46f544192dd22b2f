"""Numba switch for the hot kernels.

Set ``AUTOGP_NUMBA=0`` to force the pure-numpy path. ``AUTOGP_THREADS``
caps numba and BLAS thread pools.
"""
from __future__ import annotations

import functools
import os

try:
    import numba
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

    def _njit(*args, **kwargs):
        def deco(f):
            @functools.wraps(f)
            def wrapper(*a, **kw):
                return f(*a, **kw)

            return wrapper

        if len(args) == 1 and callable(args[0]) and not kwargs:
            return deco(args[0])
        return deco


def njit(*args, **kwargs):
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)


def numba_enabled() -> bool:
    """True when hot kernels should dispatch to the jitted versions."""
    if not NUMBA_AVAILABLE:
        return False
    flag = os.environ.get("AUTOGP_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


def apply_thread_cap() -> int | None:
    """Honour ``AUTOGP_THREADS`` for numba and BLAS. Returns the cap in force."""
    raw = os.environ.get("AUTOGP_THREADS")
    if not raw:
        return None
    n = max(1, int(raw))
    if NUMBA_AVAILABLE:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(n)
    except ImportError:
        pass
    return n
