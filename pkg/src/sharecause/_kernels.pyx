# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for training and cluster scoring.

Each function mirrors the numpy version in ``_fallback.py``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, sqrt

cnp.import_array()


cdef inline double _softplus_neg(double s) nogil:
    # -ln(sigmoid(s)) = ln(1 + e^{-s})
    if s > 0:
        return log1p(exp(-s))
    return -s + log1p(exp(s))


cdef inline double _sigmoid_neg(double s) nogil:
    # sigmoid(-s)
    cdef double e
    if s >= 0:
        e = exp(-s)
        return e / (1.0 + e)
    return 1.0 / (1.0 + exp(s))


def softplus_neg(s):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(s, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t k
    for k in range(flat.shape[0]):
        out[k] = _softplus_neg(flat[k])
    return out.reshape(np.shape(s))


def mf_triplet_grad(const double[:, ::1] U, const double[:, ::1] V,
                    const long[::1] users, const long[::1] pos, const long[::1] neg,
                    const double[::1] coef, double scale,
                    double[:, ::1] gU, double[:, ::1] gV):
    cdef Py_ssize_t n = users.shape[0]
    cdef Py_ssize_t d = U.shape[1]
    cdef Py_ssize_t t, k, u, i, j
    cdef double s, g, c, total = 0.0, uk
    with nogil:
        for t in range(n):
            c = coef[t]
            if c == 0.0:
                continue
            u = users[t]
            i = pos[t]
            j = neg[t]
            s = 0.0
            for k in range(d):
                s = s + U[u, k] * (V[i, k] - V[j, k])
            total = total + c * _softplus_neg(s)
            g = -scale * c * _sigmoid_neg(s)
            for k in range(d):
                uk = U[u, k]
                gU[u, k] += g * (V[i, k] - V[j, k])
                gV[i, k] += g * uk
                gV[j, k] -= g * uk
    return total


def rmsprop_update(double[::1] param, const double[::1] grad, double[::1] acc,
                   double lr, double decay, double eps):
    cdef Py_ssize_t k, n = param.shape[0]
    cdef double g
    with nogil:
        for k in range(n):
            g = grad[k]
            acc[k] = decay * acc[k] + (1.0 - decay) * g * g
            param[k] -= lr * g / sqrt(acc[k] + eps)


def cluster_distance_sums(X, labels, Py_ssize_t n_clusters):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    out_arr = np.zeros((n, n_clusters))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, q, k
    cdef double acc, diff, dist
    with nogil:
        for p in range(n):
            for q in range(p + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = x[p, k] - x[q, k]
                    acc = acc + diff * diff
                dist = sqrt(acc)
                if lab[q] >= 0:
                    out[p, lab[q]] += dist
                if lab[p] >= 0:
                    out[q, lab[p]] += dist
    return out_arr
