"""Kernel backend selection.

Hot loops are written once as plain Python over numpy arrays and compiled with
numba's ``njit`` when it is available. Setting ``IMPACT_DISABLE_NUMBA=1`` (or
``true``/``yes``) before import forces the pure-numpy kernels instead.
"""
import os

_FLAG = "IMPACT_DISABLE_NUMBA"


def _disabled_by_env() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _disabled_by_env()


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged.

    The uncompiled function is always reachable as ``fn.py_func`` so callers and
    tests can compare the two paths.
    """
    if not HAVE_NUMBA:
        fn.py_func = fn
        return fn
    return _numba.njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
