# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled elementwise kernels; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, expm1, fabs

cnp.import_array()

BACKEND = "cython"


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _log_expm1(double x) noexcept nogil:
    if x > 30.0:
        return x + log1p(-exp(-x))
    return log(expm1(x))


def _prep(x):
    # ascontiguousarray promotes 0-d input to 1-d; callers reshape back
    return np.ascontiguousarray(x, dtype=np.float64)


def softplus(x):
    shape = np.shape(x)
    a = _prep(x)
    out = np.empty_like(a)
    cdef double[::1] src = a.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i, n = src.shape[0]
    with nogil:
        for i in range(n):
            dst[i] = _softplus(src[i])
    return out.reshape(shape)


def sigmoid(x):
    shape = np.shape(x)
    a = _prep(x)
    out = np.empty_like(a)
    cdef double[::1] src = a.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i, n = src.shape[0]
    with nogil:
        for i in range(n):
            dst[i] = _sigmoid(src[i])
    return out.reshape(shape)


def log_expm1(x):
    shape = np.shape(x)
    a = _prep(x)
    out = np.empty_like(a)
    cdef double[::1] src = a.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i, n = src.shape[0]
    with nogil:
        for i in range(n):
            dst[i] = _log_expm1(src[i])
    return out.reshape(shape)


def log_expm1_grad(x):
    shape = np.shape(x)
    a = _prep(x)
    out = np.empty_like(a)
    cdef double[::1] src = a.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i, n = src.shape[0]
    with nogil:
        for i in range(n):
            dst[i] = -1.0 / expm1(-src[i])
    return out.reshape(shape)


def interval(raw, lower, upper):
    shape = np.broadcast_shapes(np.shape(raw), np.shape(lower), np.shape(upper))
    r, lo, hi = np.broadcast_arrays(_prep(raw), _prep(lower), _prep(upper))
    r = np.ascontiguousarray(r)
    lo = np.ascontiguousarray(lo)
    hi = np.ascontiguousarray(hi)
    out = np.empty_like(r)
    cdef double[::1] rv = r.reshape(-1)
    cdef double[::1] lv = lo.reshape(-1)
    cdef double[::1] hv = hi.reshape(-1)
    cdef double[::1] dst = out.reshape(-1)
    cdef Py_ssize_t i, n = rv.shape[0]
    with nogil:
        for i in range(n):
            dst[i] = hv[i] - _softplus(_log_expm1(hv[i] - lv[i]) - _softplus(rv[i]))
    return out.reshape(shape)
