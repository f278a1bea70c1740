"""Numba acceleration switch.

Hot kernels (boosted-tree growth and prediction) exist in two versions: a
numba ``@njit`` build and a vectorized pure-numpy build.  The numba build is
used when numba imports cleanly and the environment variable
``DRBOOST_NO_NUMBA`` is unset/0; otherwise the numpy build is used.  Both
produce the same trees on the same inputs (see benchmarks/bench_kernels.py).
"""

import os

_FALSEY = ("", "0", "false", "no", "off")


def _env_disabled() -> bool:
    return os.environ.get("DRBOOST_NO_NUMBA", "0").strip().lower() not in _FALSEY


NUMBA_AVAILABLE = False
if not _env_disabled():
    try:
        from numba import njit  # noqa: F401

        NUMBA_AVAILABLE = True
    except ImportError:  # pragma: no cover - depends on environment
        NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()


def jit_if_enabled(func):
    """Apply @njit(cache=True) when the numba path is active, else no-op."""
    if USE_NUMBA:
        from numba import njit

        return njit(cache=True)(func)
    return func


def accel_mode() -> str:
    """Name of the active kernel path: 'numba' or 'numpy'."""
    return "numba" if USE_NUMBA else "numpy"
