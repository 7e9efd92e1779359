"""Optional numba acceleration.

Set ``RPTS_NUMBA=0`` in the environment before import to run every kernel
as plain numpy (useful for debugging and for the benchmark comparison).
"""
import os

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

NUMBA_ENABLED = HAVE_NUMBA and os.environ.get("RPTS_NUMBA", "1").strip().lower() not in (
    "0",
    "false",
    "no",
    "off",
)


def optional_njit(*args, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    if args and callable(args[0]) and len(args) == 1 and not kwargs:
        return optional_njit()(args[0])

    def decorator(func):
        if NUMBA_ENABLED:
            return _njit(*args, **kwargs)(func)
        return func

    return decorator
