# cython: language_level=3
"""Compiled inner loops for design-matrix products and mixture quantiles.

The design matrix is held in padded row-index form: row ``r`` has entries
``vals[r, c]`` at columns ``cols[r, c]`` (padding uses value 0).
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, fabs, sqrt

cnp.import_array()

cdef double _SQRT1_2 = 0.70710678118654752440


def design_gather(cnp.int64_t[:, ::1] cols, double[:, ::1] vals, double[:, ::1] M):
    """Return ``A @ M`` for ``M`` of shape (s, k)."""
    cdef Py_ssize_t d = cols.shape[0], p = cols.shape[1], k = M.shape[1]
    cdef Py_ssize_t r, c, j, col
    cdef double v
    out_arr = np.zeros((d, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(d):
            for c in range(p):
                v = vals[r, c]
                if v == 0.0:
                    continue
                col = cols[r, c]
                for j in range(k):
                    out[r, j] += v * M[col, j]
    return out_arr


def design_rmatvec(cnp.int64_t[:, ::1] cols, double[:, ::1] vals, double[::1] v, Py_ssize_t s):
    """Return ``A.T @ v``."""
    cdef Py_ssize_t d = cols.shape[0], p = cols.shape[1]
    cdef Py_ssize_t r, c
    out_arr = np.zeros(s, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for r in range(d):
            for c in range(p):
                out[cols[r, c]] += vals[r, c] * v[r]
    return out_arr


def design_gram(cnp.int64_t[:, ::1] cols, double[:, ::1] vals, double[::1] w, Py_ssize_t s):
    """Return ``A.T @ diag(w) @ A`` as a dense (s, s) matrix."""
    cdef Py_ssize_t d = cols.shape[0], p = cols.shape[1]
    cdef Py_ssize_t r, a, b
    cdef double wa
    out_arr = np.zeros((s, s), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(d):
            for a in range(p):
                wa = w[r] * vals[r, a]
                if wa == 0.0:
                    continue
                for b in range(p):
                    out[cols[r, a], cols[r, b]] += wa * vals[r, b]
    return out_arr


cdef inline double _mixture_cdf(double x, double[:, ::1] means, double[:, ::1] sds,
                                double[::1] weights, Py_ssize_t i) nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0, sd
    for k in range(weights.shape[0]):
        sd = sds[k, i]
        if sd > 0.0:
            acc += weights[k] * 0.5 * erfc(-(x - means[k, i]) / sd * _SQRT1_2)
        elif x >= means[k, i]:
            acc += weights[k]
    return acc


def mixture_quantiles(double[:, ::1] means, double[:, ::1] sds, double[::1] weights,
                      double[::1] probs, double tol=1e-8, int max_iter=200):
    """Quantiles of per-element Gaussian mixtures by bisection on the CDF.

    ``means`` and ``sds`` have shape (K, s); the result has shape (s, len(probs)).
    """
    cdef Py_ssize_t K = means.shape[0], s = means.shape[1], q = probs.shape[0]
    cdef Py_ssize_t i, j, k
    cdef int it
    cdef double lo0, hi0, lo, hi, mid, F, p, a, b
    out_arr = np.empty((s, q), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(s):
            lo0 = means[0, i] - 10.0 * sds[0, i]
            hi0 = means[0, i] + 10.0 * sds[0, i]
            for k in range(1, K):
                a = means[k, i] - 10.0 * sds[k, i]
                b = means[k, i] + 10.0 * sds[k, i]
                if a < lo0:
                    lo0 = a
                if b > hi0:
                    hi0 = b
            for j in range(q):
                p = probs[j]
                lo = lo0
                hi = hi0
                mid = 0.5 * (lo + hi)
                for it in range(max_iter):
                    mid = 0.5 * (lo + hi)
                    F = _mixture_cdf(mid, means, sds, weights, i)
                    if fabs(F - p) <= tol:
                        break
                    if F < p:
                        lo = mid
                    else:
                        hi = mid
                    if hi - lo <= 1e-15 * (1.0 + fabs(mid)):
                        break
                out[i, j] = mid
    return out_arr
