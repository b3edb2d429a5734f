"""Numba on/off switch.

Hot loop kernels are decorated with `maybe_njit`. Set DEEPCUT_NUMBA=0 to run
the same functions as plain Python (debugging, or hosts without a working
numba), at the cost of slower exact-enumeration oracles. Both paths execute
identical code, so results are bit-identical either way.
"""

import os

_FLAG = os.environ.get("DEEPCUT_NUMBA", "1").strip().lower()
NUMBA_ENABLED = _FLAG not in ("0", "false", "off", "no")

if NUMBA_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:

    def maybe_njit(func=None, **kwargs):
        kwargs.setdefault("cache", True)
        if func is not None:
            return _njit(**kwargs)(func)
        return _njit(**kwargs)

else:

    def maybe_njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrap(f):
            return f

        return wrap
