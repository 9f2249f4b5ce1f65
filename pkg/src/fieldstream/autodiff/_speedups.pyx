# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused kernels for the autodiff hot path.

Single-pass loops over C-contiguous float64 buffers; avoids the temporary
arrays the numpy fallback allocates per expression. Formulas match
_numpy_kernels; reductions are sequential rather than numpy's pairwise sums,
so cross-backend differences sit at rounding level (within one process only
one backend is ever active).
"""

from libc.math cimport exp, tanh

import numpy as np

cdef double GELU_C0 = 0.7978845608028654
cdef double GELU_C1 = 0.044715


def tanh_fwd(double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = tanh(x[i])
    return out_arr


def tanh_bwd(double[::1] y, double[::1] g):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        out[i] = (1.0 - y[i] * y[i]) * g[i]
    return out_arr


def gelu_fwd(double[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double v, t
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        v = x[i]
        t = tanh(GELU_C0 * (v + GELU_C1 * v * v * v))
        out[i] = 0.5 * v * (1.0 + t)
    return out_arr


def gelu_bwd(double[::1] x, double[::1] g):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double v, v2, t, sech2
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        v = x[i]
        v2 = v * v
        t = tanh(GELU_C0 * (v + GELU_C1 * v * v2))
        sech2 = 1.0 - t * t
        out[i] = g[i] * (0.5 * (1.0 + t)
                         + 0.5 * v * sech2 * GELU_C0 * (1.0 + 3.0 * GELU_C1 * v2))
    return out_arr


def softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t cols = x.shape[1]
    cdef Py_ssize_t r, c
    cdef double m, s
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for r in range(rows):
        m = x[r, 0]
        for c in range(1, cols):
            if x[r, c] > m:
                m = x[r, c]
        s = 0.0
        for c in range(cols):
            out[r, c] = exp(x[r, c] - m)
            s += out[r, c]
        for c in range(cols):
            out[r, c] /= s
    return out_arr


def softmax_bwd(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t rows = y.shape[0]
    cdef Py_ssize_t cols = y.shape[1]
    cdef Py_ssize_t r, c
    cdef double dot
    out_arr = np.empty((rows, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for r in range(rows):
        dot = 0.0
        for c in range(cols):
            dot += y[r, c] * g[r, c]
        for c in range(cols):
            out[r, c] = y[r, c] * (g[r, c] - dot)
    return out_arr
