# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors ``_kernels_py`` one function at a time."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, log1p, exp, sqrt, fabs

cnp.import_array()

cdef int MAX_ITER = 200


cdef inline double _softplus(double t) nogil:
    if t > 0:
        return t + log1p(exp(-t))
    return log1p(exp(t))


cdef inline double _sigmoid(double t) nogil:
    cdef double e
    if t >= 0:
        return 1.0 / (1.0 + exp(-t))
    e = exp(t)
    return e / (1.0 + e)


cdef inline double _dev(double y1, double y2, double t, double crit) nogil:
    cdef double n = y1 + y2
    return 2.0 * (y2 * (log(y2 / n) + _softplus(-t))
                  + y1 * (log(y1 / n) + _softplus(t))) - crit


def lr_deviance(double y1, double y2, double t, double crit):
    return _dev(y1, y2, t, crit)


cdef int _lr_root(double y1, double y2, double crit, double direction, double* out) nogil:
    cdef double n = y1 + y2
    cdef double that = log(y2 / y1)
    cdef double step = sqrt(crit) * sqrt(1.0 / y1 + 1.0 / y2)
    cdef double inner = that
    cdef double outer = that + direction * step
    cdef double t, d, slope, tn, lo, hi, scale
    cdef int k = 0, it
    while _dev(y1, y2, outer, crit) <= 0.0:
        inner = outer
        step *= 2.0
        outer = that + direction * step
        k += 1
        if k > 60:
            out[0] = outer
            return 2
    t = outer
    for it in range(MAX_ITER):
        d = _dev(y1, y2, t, crit)
        if d > 0.0:
            outer = t
        elif d < 0.0:
            inner = t
        else:
            out[0] = t
            return 0
        slope = 2.0 * (n * _sigmoid(t) - y2)
        if slope != 0.0:
            tn = t - d / slope
        else:
            tn = 0.5 * (inner + outer)
        if inner < outer:
            lo = inner
            hi = outer
        else:
            lo = outer
            hi = inner
        if not (lo < tn and tn < hi):
            tn = 0.5 * (inner + outer)
        scale = fabs(t)
        if scale < 1.0:
            scale = 1.0
        if fabs(tn - t) <= 4e-16 * scale:
            t = tn
            out[0] = t
            scale = crit if crit > 1.0 else 1.0
            if fabs(_dev(y1, y2, t, crit)) < 1e-10 * scale:
                return 0
            return 1
        t = tn
    out[0] = t
    return 1


def lr_bounds(y1, y2, double crit):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = np.ascontiguousarray(y1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b = np.ascontiguousarray(y2, dtype=np.float64)
    cdef Py_ssize_t m = a.shape[0], i
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lower = np.empty(m)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] upper = np.empty(m)
    cdef cnp.ndarray[cnp.int8_t, ndim=1] status = np.zeros(m, dtype=np.int8)
    cdef double tl = 0.0, tu = 0.0
    cdef int sl, su
    with nogil:
        for i in range(m):
            sl = _lr_root(a[i], b[i], crit, -1.0, &tl)
            su = _lr_root(a[i], b[i], crit, 1.0, &tu)
            lower[i] = exp(tl)
            upper[i] = exp(tu)
            status[i] = sl if sl > su else su
    return lower, upper, status


def risk_sums(p1, p2, lower, upper, double ratio):
    cdef const double[::1] q1 = np.ascontiguousarray(p1, dtype=np.float64)
    cdef const double[::1] q2 = np.ascontiguousarray(p2, dtype=np.float64)
    cdef const double[:, :] lo = np.asarray(lower, dtype=np.float64)
    cdef const double[:, :] hi = np.asarray(upper, dtype=np.float64)
    cdef Py_ssize_t m = q1.shape[0], n = q2.shape[0], i, j
    cdef double acc_l = 0.0, acc_u = 0.0, row_l, row_u
    with nogil:
        for i in range(m):
            row_l = 0.0
            row_u = 0.0
            for j in range(n):
                row_l += q2[j] * (lo[i, j] > ratio)
                row_u += q2[j] * (hi[i, j] < ratio)
            acc_l += q1[i] * row_l
            acc_u += q1[i] * row_u
    return acc_l, acc_u
