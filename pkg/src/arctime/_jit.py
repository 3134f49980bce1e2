"""Backend switch for the numeric kernels.

Kernels are written once in a numba-compatible subset of Python. With
numba available they are compiled with ``@njit``; setting the environment
variable ``ARCTIME_NO_NUMBA=1`` (or running without numba installed) leaves
them as plain Python functions operating on numpy arrays.

Both backends draw from a Mersenne Twister seeded through :func:`seed`, and
kernels only consume ``np.random.random`` and ``np.random.standard_normal``,
whose streams agree between numba and numpy. A chain therefore produces the
same samples on either backend.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("ARCTIME_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba
except ImportError:  # pragma: no cover - exercised via subprocess tests
    _numba = None

USE_NUMBA: bool = _numba is not None
BACKEND: str = "numba" if USE_NUMBA else "numpy"


def jit(func):
    """Compile ``func`` with numba in nopython mode when enabled."""
    if USE_NUMBA:
        return _numba.njit(cache=True, nogil=True)(func)
    return func


def _seed_impl(value):
    np.random.seed(value)


_seed_kernel = jit(_seed_impl)


def seed(value: int) -> None:
    """Seed the kernel random stream of the calling thread."""
    _seed_kernel(int(value) % (2**32))
