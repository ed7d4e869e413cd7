# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled quantized-step kernels; see _kernels_py for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport erfc, sqrt

cnp.import_array()

cdef double _INV_SQRT2 = 0.7071067811865475244
# beyond these standardized distances the normal cdf rounds to exactly 0 or 1
cdef double _Z_LO = -38.5
cdef double _Z_HI = 8.5


cdef inline double _ndtr(double z) nogil:
    return 0.5 * erfc(-z * _INV_SQRT2)


def gauss_cell_probs(double[::1] mean, double[::1] std, double[::1] edges):
    cdef Py_ssize_t K = mean.shape[0]
    cdef Py_ssize_t E = edges.shape[0]
    cdef Py_ssize_t L = E + 1
    out = np.zeros((K, L), dtype=np.float64)
    cdef double[:, ::1] P = out
    cdef Py_ssize_t k, j, lo, hi, a, b, mid
    cdef double m, s, prev, cur
    with nogil:
        for k in range(K):
            m = mean[k]
            s = std[k]
            # first edge with z > _Z_LO and first edge with z >= _Z_HI
            a = 0
            b = E
            while a < b:
                mid = (a + b) // 2
                if (edges[mid] - m) / s > _Z_LO:
                    b = mid
                else:
                    a = mid + 1
            lo = a
            a = lo
            b = E
            while a < b:
                mid = (a + b) // 2
                if (edges[mid] - m) / s >= _Z_HI:
                    b = mid
                else:
                    a = mid + 1
            hi = a
            prev = 0.0
            for j in range(lo, hi):
                cur = _ndtr((edges[j] - m) / s)
                P[k, j] = cur - prev
                prev = cur
            P[k, hi] = 1.0 - prev
    return out


def clamped_weights(double[::1] shift, double[::1] scale, double[::1] targets,
                    double radius, double h):
    cdef Py_ssize_t K = shift.shape[0]
    cdef Py_ssize_t L = targets.shape[0]
    out = np.empty((K, L), dtype=np.float64)
    cdef double[:, ::1] H = out
    cdef Py_ssize_t k, l
    cdef double u, c, s
    with nogil:
        for k in range(K):
            c = shift[k]
            s = scale[k]
            for l in range(L):
                u = (targets[l] - c) / s
                if u > radius:
                    u = radius
                elif u < -radius:
                    u = -radius
                H[k, l] = u / h
    return out


def weighted_sums(double[:, ::1] P, double[::1] v, double[::1] w, double[:, ::1] H):
    cdef Py_ssize_t K = P.shape[0]
    cdef Py_ssize_t L = P.shape[1]
    ev_arr = np.empty(K, dtype=np.float64)
    ew_arr = np.empty(K, dtype=np.float64)
    cdef double[::1] ev = ev_arr
    cdef double[::1] ew = ew_arr
    cdef Py_ssize_t k, l
    cdef double p, acc_v, acc_w
    with nogil:
        for k in range(K):
            acc_v = 0.0
            acc_w = 0.0
            for l in range(L):
                p = P[k, l]
                acc_v += p * v[l]
                acc_w += p * w[l] * H[k, l]
            ev[k] = acc_v
            ew[k] = acc_w
    return ev_arr, ew_arr
