"""Numba switch.

Compiled kernels are used when numba imports and ``BAYSPN_DISABLE_NUMBA`` is
unset (or "0").  The pure-numpy fallbacks consume the same pre-drawn uniforms,
so both paths walk the same chain up to floating-point ties.
"""
import os

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(func):
            return func

        return wrapper


def _env_enabled():
    flag = os.environ.get("BAYSPN_DISABLE_NUMBA", "0").strip().lower()
    return flag in ("", "0", "false", "no")


_enabled = HAVE_NUMBA and _env_enabled()


def enabled():
    return _enabled


def set_enabled(flag):
    """Toggle the compiled path at runtime; returns the previous setting."""
    global _enabled
    previous = _enabled
    _enabled = bool(flag) and HAVE_NUMBA
    return previous


_threads = 1


def set_threads(n):
    """Worker cap for process-level parallelism (grid search).

    The compiled kernels are serial; results never depend on this value.
    """
    global _threads
    _threads = max(1, int(n or 1))
    return _threads


def threads():
    return _threads
