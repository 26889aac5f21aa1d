"""Pure-numpy fallback for the compiled chain kernels.

Same signatures and band conventions as ``_chainops``; used when the
extension is not built or when ``GVIT_PURE_PYTHON=1``.
"""

import numpy as np


def tridiag_matmul(sub, diag, sup, x):
    n = x.shape[0]
    if diag.shape[0] != n or sub.shape[0] != n - 1 or sup.shape[0] != n - 1:
        raise ValueError("band lengths inconsistent with x")
    out = diag[:, None] * x
    if n > 1:
        out[:-1] += sup[:, None] * x[1:]
        out[1:] += sub[:, None] * x[:-1]
    return out


def pool_forward(x, starts, ends):
    m = starts.shape[0]
    out = np.empty((m, x.shape[1]), dtype=np.float64)
    for j in range(m):
        out[j] = x[starts[j]:ends[j]].mean(axis=0)
    return out


def pool_backward(gout, starts, ends, n):
    gx = np.zeros((n, gout.shape[1]), dtype=np.float64)
    for j in range(gout.shape[0]):
        s, e = starts[j], ends[j]
        gx[s:e] += gout[j] / (e - s)
    return gx
