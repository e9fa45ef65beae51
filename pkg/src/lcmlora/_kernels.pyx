# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise kernels.

Every routine works on C-contiguous float32 buffers and keeps its
arithmetic (and any reduction) in double precision. The signatures mirror
:mod:`lcmlora._kernels_py` one for one.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cdef extern from "_silu.h":
    void silu_fwd_loop(const float *x, float *out, long n) nogil
    void silu_bwd_loop(const float *x, const float *grad, float *out, long n) nogil

cnp.import_array()

ctypedef cnp.float32_t f32


def silu_forward(const f32[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    out = np.empty(n, dtype=np.float32)
    cdef f32[::1] o = out
    if n:
        silu_fwd_loop(&x[0], &o[0], n)
    return out


def silu_backward(const f32[::1] x, const f32[::1] grad_out):
    cdef Py_ssize_t n = x.shape[0]
    if grad_out.shape[0] != n:
        raise ValueError("silu_backward: length mismatch")
    out = np.empty(n, dtype=np.float32)
    cdef f32[::1] o = out
    if n:
        silu_bwd_loop(&x[0], &grad_out[0], &o[0], n)
    return out


def huber_forward(const f32[::1] diff, double delta):
    cdef Py_ssize_t i, n = diff.shape[0]
    cdef double a, acc = 0.0
    for i in range(n):
        a = fabs(diff[i])
        if a <= delta:
            acc += 0.5 * a * a
        else:
            acc += delta * (a - 0.5 * delta)
    return acc / n


def huber_backward(const f32[::1] diff, double delta, double scale):
    cdef Py_ssize_t i, n = diff.shape[0]
    out = np.empty(n, dtype=np.float32)
    cdef f32[::1] o = out
    cdef double d
    for i in range(n):
        d = diff[i]
        if d > delta:
            d = delta
        elif d < -delta:
            d = -delta
        o[i] = <f32>(d * scale)
    return out


def adam_update(f32[::1] p, const f32[::1] g, f32[::1] m, f32[::1] v,
                double lr, double beta1, double beta2, double eps,
                double bias1, double bias2):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, mi, vi
    for i in range(n):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * gi * gi
        m[i] = <f32>mi
        v[i] = <f32>vi
        p[i] = <f32>(p[i] - lr * (mi / bias1) / (sqrt(vi / bias2) + eps))


def ema_update(f32[::1] target, const f32[::1] source, double mu):
    cdef Py_ssize_t i, n = target.shape[0]
    for i in range(n):
        target[i] = <f32>(mu * target[i] + (1.0 - mu) * source[i])
