# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every routine reduces within a row sequentially, so outputs do not depend on
the number of OpenMP threads.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log, sqrt, pow, fabs, INFINITY

cnp.import_array()


cdef inline double _cost(const double[:, ::1] X, const double[:, ::1] Y,
                         Py_ssize_t i, Py_ssize_t j, Py_ssize_t d, double p) noexcept nogil:
    cdef double s = 0.0, t
    cdef Py_ssize_t k
    for k in range(d):
        t = X[i, k] - Y[j, k]
        s += t * t
    if p == 2.0:
        return s
    return pow(s, 0.5 * p)


def max_affine(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] c,
               int threads=1):
    """Values and (lowest) argmax of ``max_i <x, y_i> - c_i`` for every row of X."""
    cdef Py_ssize_t M = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k, best
    cdef double v, bv
    vals_arr = np.empty(M, dtype=np.float64)
    idx_arr = np.empty(M, dtype=np.int64)
    cdef double[::1] vals = vals_arr
    cdef long long[::1] idx = idx_arr
    for i in prange(M, nogil=True, num_threads=threads, schedule="static"):
        bv = -INFINITY
        best = 0
        for j in range(m):
            v = -c[j]
            for k in range(d):
                v = v + X[i, k] * Y[j, k]
            if v > bv:
                bv = v
                best = j
        vals[i] = bv
        idx[i] = best
    return vals_arr, idx_arr


def logsumexp_affine(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] c,
                     double beta, int threads=1):
    """Smoothed max-affine value, gradient and Hessian at every row of X."""
    cdef Py_ssize_t M = X.shape[0], m = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, k, l
    cdef double v, mx, s, w
    vals_arr = np.empty(M, dtype=np.float64)
    grad_arr = np.zeros((M, d), dtype=np.float64)
    hess_arr = np.zeros((M, d, d), dtype=np.float64)
    cdef double[::1] vals = vals_arr
    cdef double[:, ::1] grad = grad_arr
    cdef double[:, :, ::1] hess = hess_arr
    for i in prange(M, nogil=True, num_threads=threads, schedule="static"):
        mx = -INFINITY
        for j in range(m):
            v = -c[j]
            for k in range(d):
                v = v + X[i, k] * Y[j, k]
            v = beta * v
            if v > mx:
                mx = v
        s = 0.0
        for j in range(m):
            v = -c[j]
            for k in range(d):
                v = v + X[i, k] * Y[j, k]
            w = exp(beta * v - mx)
            s = s + w
            for k in range(d):
                grad[i, k] += w * Y[j, k]
                for l in range(d):
                    hess[i, k, l] += w * Y[j, k] * Y[j, l]
        vals[i] = (mx + log(s)) / beta
        for k in range(d):
            grad[i, k] = grad[i, k] / s
        for k in range(d):
            for l in range(d):
                hess[i, k, l] = beta * (hess[i, k, l] / s - grad[i, k] * grad[i, l])
    return vals_arr, grad_arr, hess_arr


def sinkhorn_softmin(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] h,
                     double eps, double p, int threads=1):
    """``-eps * log sum_j exp(h_j - |x_i - y_j|^p / eps)`` without storing the cost matrix."""
    cdef Py_ssize_t N = X.shape[0], M = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double mx, s, v
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in prange(N, nogil=True, num_threads=threads, schedule="static"):
        mx = -INFINITY
        for j in range(M):
            v = h[j] - _cost(X, Y, i, j, d, p) / eps
            if v > mx:
                mx = v
        s = 0.0
        for j in range(M):
            s = s + exp(h[j] - _cost(X, Y, i, j, d, p) / eps - mx)
        out[i] = -eps * (mx + log(s))
    return out_arr


def mean_distance(const double[:, ::1] X, const double[:, ::1] Y, int threads=1):
    """Mean Euclidean distance over all pairs (rows of X) x (rows of Y)."""
    cdef Py_ssize_t N = X.shape[0], M = Y.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j
    cdef double s
    rows_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] rows = rows_arr
    for i in prange(N, nogil=True, num_threads=threads, schedule="static"):
        s = 0.0
        for j in range(M):
            s = s + sqrt(_cost(X, Y, i, j, d, 2.0))
        rows[i] = s
    cdef double total = 0.0
    for i in range(N):
        total += rows[i]
    return total / (<double>N * <double>M)


def quantile_wpp(const double[::1] xa, const double[::1] wa,
                 const double[::1] xb, const double[::1] wb, double p):
    """Integral of ``|F_a^{-1}(u) - F_b^{-1}(u)|^p`` for two sorted weighted clouds."""
    cdef Py_ssize_t na = xa.shape[0], nb = xb.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double ra = wa[0], rb = wb[0], step, total = 0.0
    with nogil:
        while i < na and j < nb:
            step = ra if ra < rb else rb
            total += step * pow(fabs(xa[i] - xb[j]), p)
            ra -= step
            rb -= step
            if ra <= 1e-15 * wa[i]:
                i += 1
                if i < na:
                    ra = wa[i]
            if rb <= 1e-15 * wb[j]:
                j += 1
                if j < nb:
                    rb = wb[j]
    return total
