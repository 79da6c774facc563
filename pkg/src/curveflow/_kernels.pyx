# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled MLP kernels.

Same contract as ``_kernels_py``. GEMMs go through numpy's matmul (its BLAS
is the fastest one available in-process); bias add, activation, activation
derivative and bias-gradient reduction are single fused C passes, which
removes the temporaries the numpy version allocates per layer.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()

_matmul = np.matmul


cdef void _bias_act(double[:, ::1] z, double[::1] b, double[:, ::1] h, int code) noexcept nogil:
    # one loop nest per activation so each inner loop vectorizes
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t m = z.shape[1]
    cdef double v
    if code == 0:
        for i in range(n):
            for j in range(m):
                v = z[i, j] + b[j]
                z[i, j] = v
                h[i, j] = v / (1.0 + exp(-v))
    elif code == 1:
        for i in range(n):
            for j in range(m):
                v = z[i, j] + b[j]
                z[i, j] = v
                h[i, j] = v if v > 0.0 else 0.0
    else:
        for i in range(n):
            for j in range(m):
                v = z[i, j] + b[j]
                z[i, j] = v
                h[i, j] = tanh(v)


cdef void _bias_add(double[:, ::1] z, double[::1] b) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            z[i, j] = z[i, j] + b[j]


cdef void _act_grad_mul(double[:, ::1] g, double[:, ::1] z, int code) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef Py_ssize_t n = z.shape[0]
    cdef Py_ssize_t m = z.shape[1]
    cdef double v, s, th
    if code == 0:
        for i in range(n):
            for j in range(m):
                v = z[i, j]
                s = 1.0 / (1.0 + exp(-v))
                g[i, j] = g[i, j] * (s * (1.0 + v * (1.0 - s)))
    elif code == 1:
        for i in range(n):
            for j in range(m):
                if z[i, j] <= 0.0:
                    g[i, j] = 0.0
    else:
        for i in range(n):
            for j in range(m):
                th = tanh(z[i, j])
                g[i, j] = g[i, j] * (1.0 - th * th)


cdef void _col_sum(double[:, ::1] g, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(g.shape[0]):
        for j in range(g.shape[1]):
            out[j] += g[i, j]


def mlp_forward(x, list weights, list biases, int act_code):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t k
    cdef double[:, ::1] zv
    cdef double[:, ::1] hv
    cdef double[::1] bv
    h = np.ascontiguousarray(x, dtype=np.float64)
    cache = []
    for k in range(n_layers):
        w = weights[k]
        z = _matmul(h, w.T)
        zv = z
        bv = biases[k]
        if k == n_layers - 1:
            with nogil:
                _bias_add(zv, bv)
            cache.append((h, None))
            return z, cache
        hn = np.empty_like(z)
        hv = hn
        with nogil:
            _bias_act(zv, bv, hv, act_code)
        cache.append((h, z))
        h = hn
    raise ValueError("network has no layers")


def mlp_backward(grad_out, list weights, list cache, int act_code, bint need_input_grad=True):
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t k
    cdef double[:, ::1] gv
    cdef double[:, ::1] zv
    cdef double[::1] dbv
    g = np.ascontiguousarray(grad_out, dtype=np.float64)
    dws = [None] * n_layers
    dbs = [None] * n_layers
    for k in range(n_layers - 1, -1, -1):
        h = cache[k][0]
        w = weights[k]
        dws[k] = _matmul(g.T, h)
        db = np.zeros(w.shape[0], dtype=np.float64)
        dbv = db
        gv = g
        with nogil:
            _col_sum(gv, dbv)
        dbs[k] = db
        if k == 0 and not need_input_grad:
            return dws, dbs, None
        g = _matmul(g, w)
        if k > 0:
            gv = g
            zv = cache[k - 1][1]
            with nogil:
                _act_grad_mul(gv, zv, act_code)
    return dws, dbs, g
