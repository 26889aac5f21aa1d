"""Backend selection for the chain-propagation and pooling kernels.

The compiled extension is preferred when importable; the numpy fallback is
always available. ``GVIT_PURE_PYTHON=1`` forces the fallback. Tests and the
benchmark switch backends at runtime via :func:`use`.
"""

import os

import numpy as np

from . import _chainops_py

_IMPLS = {"python": _chainops_py}
try:
    from . import _chainops  # compiled, optional

    _IMPLS["compiled"] = _chainops
except ImportError:
    pass

if os.environ.get("GVIT_PURE_PYTHON", "").strip().lower() in ("1", "true", "yes"):
    _active_name = "python"
else:
    _active_name = "compiled" if "compiled" in _IMPLS else "python"


def available_backends():
    return sorted(_IMPLS)


def active_backend() -> str:
    return _active_name


def use(name: str):
    """Switch the active backend ('compiled' or 'python')."""
    global _active_name
    if name not in _IMPLS:
        raise KeyError(f"backend {name!r} not available; have {available_backends()}")
    _active_name = name


def get_impl(name: str):
    return _IMPLS[name]


def tridiag_matmul(sub, diag, sup, x):
    return _IMPLS[_active_name].tridiag_matmul(sub, diag, sup, x)


def pool_forward(x, starts, ends):
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    ends = np.ascontiguousarray(ends, dtype=np.int64)
    return _IMPLS[_active_name].pool_forward(x, starts, ends)


def pool_backward(gout, starts, ends, n):
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    ends = np.ascontiguousarray(ends, dtype=np.int64)
    return _IMPLS[_active_name].pool_backward(gout, starts, ends, n)
