"""Hot-kernel dispatch between the numba and pure-numpy backends.

The backend is picked once at import time from the ``PROXSLIM_BACKEND``
environment variable ("numba" or "numpy").  Unset, it defaults to numba
when importable and falls back to numpy otherwise.  ``set_backend`` and
``use_backend`` exist for tests and the benchmark, which compare the two
implementations inside one process.

Both backends are deterministic: a fixed accumulation order per
implementation, float64 throughout, no threading.  Numerical results may
differ between backends in the last bits (different but fixed summation
orders); within a backend they are bit-stable.
"""

import contextlib
import os

from . import kernels_numpy

_FUNCS = (
    "conv2d_fwd",
    "conv2d_bwd_input",
    "conv2d_bwd_weights",
    "softmax_pool_fwd",
    "softmax_pool_bwd",
    "max_pool_fwd",
    "max_pool_bwd",
)

_impl = None
_backend = None


def numba_available():
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def _load(name):
    if name == "numpy":
        return kernels_numpy
    if name == "numba":
        from . import kernels_numba

        return kernels_numba
    raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")


def set_backend(name):
    """Activate a backend by name. Returns the previously active name."""
    global _impl, _backend
    previous = _backend
    _impl = _load(name)
    _backend = name
    return previous


def active_backend():
    return _backend


@contextlib.contextmanager
def use_backend(name):
    previous = set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _default_backend():
    choice = os.environ.get("PROXSLIM_BACKEND", "").strip().lower()
    if choice:
        if choice not in ("numba", "numpy"):
            raise ValueError(
                f"PROXSLIM_BACKEND={choice!r} not recognized; use 'numba' or 'numpy'"
            )
        return choice
    return "numba" if numba_available() else "numpy"


set_backend(_default_backend())


def __getattr__(name):
    if name in _FUNCS:
        return getattr(_impl, name)
    raise AttributeError(name)
