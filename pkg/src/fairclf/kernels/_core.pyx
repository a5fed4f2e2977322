# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernels: fused MLP forward/backward and the Adam update.

Same contract as kernels.pyref; all arrays are C-contiguous float64.
Loops are single-threaded so a training run stays deterministic.
"""

import numpy as np

from libc.math cimport sqrt

NAME = "compiled"


def mlp_forward(double[:, ::1] w1, double[::1] b1,
                double[:, ::1] w2, double[::1] b2,
                double[:, ::1] w3, double[::1] b3,
                double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t h1 = w1.shape[0]
    cdef Py_ssize_t h2 = w2.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc

    z1_arr = np.empty((n, h1), dtype=np.float64)
    a1_arr = np.empty((n, h1), dtype=np.float64)
    z2_arr = np.empty((n, h2), dtype=np.float64)
    a2_arr = np.empty((n, h2), dtype=np.float64)
    logits_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] z1 = z1_arr
    cdef double[:, ::1] a1 = a1_arr
    cdef double[:, ::1] z2 = z2_arr
    cdef double[:, ::1] a2 = a2_arr
    cdef double[::1] logits = logits_arr

    for i in range(n):
        for j in range(h1):
            acc = b1[j]
            for k in range(d):
                acc += x[i, k] * w1[j, k]
            z1[i, j] = acc
            a1[i, j] = acc if acc > 0.0 else 0.0
        for j in range(h2):
            acc = b2[j]
            for k in range(h1):
                acc += a1[i, k] * w2[j, k]
            z2[i, j] = acc
            a2[i, j] = acc if acc > 0.0 else 0.0
        acc = b3[0]
        for k in range(h2):
            acc += a2[i, k] * w3[0, k]
        logits[i] = acc

    return z1_arr, a1_arr, z2_arr, a2_arr, logits_arr


def mlp_backward(double[:, ::1] w2, double[:, ::1] w3,
                 double[:, ::1] x,
                 double[:, ::1] z1, double[:, ::1] a1,
                 double[:, ::1] z2, double[:, ::1] a2,
                 double[::1] dlogits):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t h1 = w2.shape[1]
    cdef Py_ssize_t h2 = w2.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double g, c

    dw1_arr = np.zeros((h1, d), dtype=np.float64)
    db1_arr = np.zeros(h1, dtype=np.float64)
    dw2_arr = np.zeros((h2, h1), dtype=np.float64)
    db2_arr = np.zeros(h2, dtype=np.float64)
    dw3_arr = np.zeros((1, h2), dtype=np.float64)
    db3_arr = np.zeros(1, dtype=np.float64)
    cdef double[:, ::1] dw1 = dw1_arr
    cdef double[::1] db1 = db1_arr
    cdef double[:, ::1] dw2 = dw2_arr
    cdef double[::1] db2 = db2_arr
    cdef double[:, ::1] dw3 = dw3_arr
    cdef double[::1] db3 = db3_arr

    dz2_row = np.empty(h2, dtype=np.float64)
    dz1_row = np.empty(h1, dtype=np.float64)
    cdef double[::1] dz2 = dz2_row
    cdef double[::1] dz1 = dz1_row

    for i in range(n):
        g = dlogits[i]
        db3[0] += g
        for k in range(h2):
            dw3[0, k] += g * a2[i, k]
            dz2[k] = g * w3[0, k] if z2[i, k] > 0.0 else 0.0
        for j in range(h1):
            dz1[j] = 0.0
        for j in range(h2):
            c = dz2[j]
            if c != 0.0:
                db2[j] += c
                for k in range(h1):
                    dw2[j, k] += c * a1[i, k]
                    dz1[k] += c * w2[j, k]
        for j in range(h1):
            c = dz1[j] if z1[i, j] > 0.0 else 0.0
            if c != 0.0:
                db1[j] += c
                for k in range(d):
                    dw1[j, k] += c * x[i, k]

    return dw1_arr, db1_arr, dw2_arr, db2_arr, dw3_arr, db3_arr


def adam_update(double[::1] p, double[::1] m, double[::1] v, double[::1] g,
                double lr, double beta1, double beta2, double eps, long t):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double bc1 = 1.0 - beta1**t
    cdef double bc2 = 1.0 - beta2**t

    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
