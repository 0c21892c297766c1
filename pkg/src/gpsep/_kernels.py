"""Kernel backend selection.

The compiled extension is used when it imports; setting ``GPSEP_PURE_PYTHON=1``
forces the numpy implementation. ``use_backend`` switches at runtime (tests and
benchmarks compare both).
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_impl = _kernels_py
_threads = 1
_partitions = 8


def available_backends():
    return ["python"] + (["compiled"] if _core is not None else [])


def backend():
    return "compiled" if _impl is _core else "python"


class _BackendSwitch:
    """Returned by :func:`use_backend`; as a context manager it restores the previous backend."""

    def __init__(self, previous):
        self.previous = previous

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        use_backend(self.previous)
        return False


def use_backend(name):
    """Select the kernel implementation ("compiled" or "python").

    Usable as a plain call or as ``with use_backend(name): ...``.
    """
    global _impl
    previous = backend()
    if name == "compiled":
        if _core is None:
            raise ImportError("the compiled extension gpsep._core is not built")
        _impl = _core
    elif name == "python":
        _impl = _kernels_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    return _BackendSwitch(previous)


def set_threads(n):
    """Threads for the likelihood reduction; results do not depend on it."""
    global _threads
    _threads = max(1, int(n))


def get_threads():
    return _threads


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def rff_forward(omega, w, phases, times):
    return _impl.rff_forward(_c(omega), _c(w), _c(phases), _c(times))


def rff_backward(omega, w, phases, times, g_val=None, g_der=None):
    return _impl.rff_backward(_c(omega), _c(w), _c(phases), _c(times), g_val, g_der)


def lik_residual_grad(y, s, a, inv_var):
    return _impl.lik_residual_grad(_c(y), _c(s), _c(a), float(inv_var), _partitions, _threads)


def sqrt_grad_contract(gt, kt, q, drow, dcol, row_vals, col_vals):
    return _impl.sqrt_grad_contract(_c(gt), _c(kt), _c(q), _c(drow), _c(dcol), _c(row_vals), _c(col_vals))


# prefer the compiled kernels unless explicitly disabled
if _core is not None and os.environ.get("GPSEP_PURE_PYTHON", "") != "1":
    _impl = _core
