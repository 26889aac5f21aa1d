# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for chain propagation and uniform pooling.

Band convention: ``sub`` and ``sup`` hold the first sub/superdiagonal
(length n-1), ``diag`` the main diagonal (length n). Accumulation order
matches the numpy fallback (diag, then sup, then sub) so both backends
round identically for the propagation kernel.
"""

import numpy as np


def tridiag_matmul(double[::1] sub, double[::1] diag, double[::1] sup,
                   double[:, ::1] x):
    """Banded (tridiagonal) matrix times dense matrix: y = B @ x."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    if diag.shape[0] != n or sub.shape[0] != n - 1 or sup.shape[0] != n - 1:
        raise ValueError("band lengths inconsistent with x")
    out_arr = np.empty((n, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(c):
                acc = diag[i] * x[i, j]
                if i < n - 1:
                    acc = acc + sup[i] * x[i + 1, j]
                if i > 0:
                    acc = acc + sub[i - 1] * x[i - 1, j]
                out[i, j] = acc
    return out_arr


def pool_forward(double[:, ::1] x, long long[::1] starts, long long[::1] ends):
    """Segment means: out[j] = mean(x[starts[j]:ends[j]])."""
    cdef Py_ssize_t m = starts.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    out_arr = np.empty((m, c), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t s, e
    cdef double acc, inv
    with nogil:
        for j in range(m):
            s = starts[j]
            e = ends[j]
            inv = 1.0 / (e - s)
            for k in range(c):
                acc = 0.0
                for i in range(s, e):
                    acc = acc + x[i, k]
                out[j, k] = acc * inv
    return out_arr


def pool_backward(double[:, ::1] gout, long long[::1] starts,
                  long long[::1] ends, Py_ssize_t n):
    """Scatter pooled gradients back: each segment splits evenly."""
    cdef Py_ssize_t m = starts.shape[0]
    cdef Py_ssize_t c = gout.shape[1]
    gx_arr = np.zeros((n, c), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t s, e
    cdef double w
    with nogil:
        for j in range(m):
            s = starts[j]
            e = ends[j]
            w = 1.0 / (e - s)
            for i in range(s, e):
                for k in range(c):
                    gx[i, k] = gx[i, k] + gout[j, k] * w
    return gx_arr
