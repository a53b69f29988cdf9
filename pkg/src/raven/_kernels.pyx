# cython: language_level=3
"""Compiled kernels; same contracts as ``_kernels_py``.

Per-sample work is fused into one pass and accumulated in batch order,
so results are deterministic for a given input.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, pow

cnp.import_array()

cdef double EPS_LOG = 1e-12
cdef double LOG_EPS = log(EPS_LOG)

PROBABILITY_AVERAGE = 0
LOGIT_SOFTMAX = 1


def loss_grad(const double[:, ::1] X, const double[:, ::1] W, const double[::1] b,
              const double[:, :, ::1] T, const double[::1] theta,
              const cnp.int64_t[::1] idx, int mode):
    cdef Py_ssize_t B = idx.shape[0], d = X.shape[1], k = W.shape[0], m = T.shape[0]
    cdef Py_ssize_t s, n, i, j, c
    cdef double zmax, lse, acc, loss = 0.0, qsum, qell, v, amax, asum

    gW_arr = np.zeros((k, d))
    gb_arr = np.zeros(k)
    gt_arr = np.zeros(m)
    buf = np.empty((5, k))
    cdef double[:, ::1] gW = gW_arr
    cdef double[::1] gb = gb_arr
    cdef double[::1] gt = gt_arr
    cdef double[::1] z = buf[0], p = buf[1], ell = buf[2], q = buf[3], g = buf[4]
    live_arr = np.empty(k, dtype=np.intc)
    cdef int[::1] live = live_arr

    for s in range(B):
        n = idx[s]
        zmax = -1e308
        for c in range(k):
            acc = b[c]
            for j in range(d):
                acc += W[c, j] * X[n, j]
            z[c] = acc
            if acc > zmax:
                zmax = acc
        lse = 0.0
        for c in range(k):
            z[c] -= zmax
            lse += exp(z[c])
        lse = log(lse)
        for c in range(k):
            v = z[c] - lse
            p[c] = exp(v)
            if v >= LOG_EPS:
                live[c] = 1
                ell[c] = v
            else:
                live[c] = 0
                ell[c] = LOG_EPS

        for c in range(k):
            acc = 0.0
            for i in range(m):
                acc += theta[i] * T[i, n, c]
            q[c] = acc
        if mode != 0:
            amax = q[0]
            for c in range(1, k):
                if q[c] > amax:
                    amax = q[c]
            asum = 0.0
            for c in range(k):
                q[c] = exp(q[c] - amax)
                asum += q[c]
            for c in range(k):
                q[c] /= asum

        qsum = 0.0
        qell = 0.0
        for c in range(k):
            qell += q[c] * ell[c]
            if live[c]:
                qsum += q[c]
        loss -= qell
        for c in range(k):
            v = p[c] * qsum
            if live[c]:
                v -= q[c]
            g[c] = v
            gb[c] += v
            for j in range(d):
                gW[c, j] += v * X[n, j]

        if mode == 0:
            for i in range(m):
                acc = 0.0
                for c in range(k):
                    acc += T[i, n, c] * ell[c]
                gt[i] -= acc
        else:
            for i in range(m):
                acc = 0.0
                for c in range(k):
                    acc += T[i, n, c] * (-q[c] * (ell[c] - qell))
                gt[i] += acc

    for c in range(k):
        gb[c] /= B
        for j in range(d):
            gW[c, j] /= B
    for i in range(m):
        gt[i] /= B
    return loss / B, gW_arr, gb_arr, gt_arr


def adam_update(double[::1] param, const double[::1] grad, double[::1] m1, double[::1] m2,
                double lr, double beta1, double beta2, double eps, long long t):
    cdef Py_ssize_t j, n = param.shape[0]
    cdef double c1 = 1.0 - pow(beta1, <double>t)
    cdef double c2 = 1.0 - pow(beta2, <double>t)
    cdef double gj
    for j in range(n):
        gj = grad[j]
        m1[j] = beta1 * m1[j] + (1.0 - beta1) * gj
        m2[j] = beta2 * m2[j] + (1.0 - beta2) * gj * gj
        param[j] -= lr * (m1[j] / c1) / (sqrt(m2[j] / c2) + eps)
