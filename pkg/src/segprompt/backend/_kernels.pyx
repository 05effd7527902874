# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot kernels.

Same surface as `pykernels`; see that module for the semantic contract.
All float kernels expect C-contiguous float64 input.
"""

from libc.math cimport sqrt, exp, tanh, pow

import numpy as np

NAME = "compiled"

cdef double GELU_K0 = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_K1 = 0.044715


def mix64_array(states):
    cdef unsigned long long[::1] s = np.ascontiguousarray(states, dtype=np.uint64)
    out_arr = np.empty(s.shape[0], dtype=np.uint64)
    cdef unsigned long long[::1] out = out_arr
    cdef Py_ssize_t i
    cdef unsigned long long z
    for i in range(s.shape[0]):
        z = s[i]
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
        out[i] = z ^ (z >> 31)
    return out_arr


# --- dense linear algebra ----------------------------------------------------
# Matrix products stay on numpy's BLAS: a hand loop here measures 5x
# slower at the 64..256 sizes this package uses.  The wrappers exist so
# both backends expose one kernel surface.

def mm(a, b):
    return np.matmul(a, b)


def mm_at(a, b):
    # a.T @ b: a is (k, m), b is (k, n)
    return np.matmul(a.T, b)


def mm_bt(a, b):
    # a @ b.T: a is (m, k), b is (n, k)
    return np.matmul(a, b.T)


def layer_norm_rows(double[:, ::1] x, double[::1] gain, double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    y_arr = np.empty((n, d))
    mean_arr = np.empty(n)
    rstd_arr = np.empty(n)
    cdef double[:, ::1] y = y_arr
    cdef double[::1] mean = mean_arr, rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double mu, var, diff, rs
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[i, j] - mu
            var += diff * diff
        var /= d
        rs = 1.0 / sqrt(var + eps)
        mean[i] = mu
        rstd[i] = rs
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * rs * gain[j] + bias[j]
    return y_arr, mean_arr, rstd_arr


def layer_norm_rows_grad(
    double[:, ::1] x,
    double[::1] gain,
    double[::1] mean,
    double[::1] rstd,
    double[:, ::1] dy,
):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    dx_arr = np.empty((n, d))
    dgain_arr = np.zeros(d)
    dbias_arr = np.zeros(d)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr, dbias = dbias_arr
    cdef Py_ssize_t i, j
    cdef double xhat, dxh, m1, m2, rs
    for i in range(n):
        rs = rstd[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rs
            dxh = dy[i, j] * gain[j]
            m1 += dxh
            m2 += dxh * xhat
            dgain[j] += dy[i, j] * xhat
            dbias[j] += dy[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rs
            dxh = dy[i, j] * gain[j]
            dx[i, j] = rs * (dxh - m1 - xhat * m2)
    return dx_arr, dgain_arr, dbias_arr


# gelu and its grad stay on numpy: its SIMD tanh beats a scalar libc
# loop about 4x at these sizes.
from segprompt.backend.pykernels import gelu, gelu_grad


def adam_update(
    double[::1] p,
    double[::1] g,
    double[::1] m,
    double[::1] v,
    long step,
    double lr,
    double beta1,
    double beta2,
    double eps,
):
    cdef Py_ssize_t n = p.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    cdef Py_ssize_t i
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)


# --- binary morphology and labeling ------------------------------------------

# Morphology and row softmax also stay on numpy: the separable
# shift-and-reduce formulation there is already vectorized and wins at
# 64x64 rasters.
from segprompt.backend.pykernels import binary_dilate, binary_erode, softmax_rows


def label_components4(mask):
    cdef unsigned char[:, ::1] src = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef int[:, ::1] labels = labels_arr
    stack_arr = np.empty(h * w, dtype=np.int64)
    cdef long[::1] stack = stack_arr
    cdef Py_ssize_t top, y, x, y0, x0, start
    cdef int current = 0
    for start in range(h * w):
        y0 = start // w
        x0 = start % w
        if src[y0, x0] == 0 or labels[y0, x0] != 0:
            continue
        current += 1
        labels[y0, x0] = current
        top = 0
        stack[top] = start
        top += 1
        while top > 0:
            top -= 1
            y = stack[top] // w
            x = stack[top] % w
            if y > 0 and src[y - 1, x] and labels[y - 1, x] == 0:
                labels[y - 1, x] = current
                stack[top] = (y - 1) * w + x
                top += 1
            if y + 1 < h and src[y + 1, x] and labels[y + 1, x] == 0:
                labels[y + 1, x] = current
                stack[top] = (y + 1) * w + x
                top += 1
            if x > 0 and src[y, x - 1] and labels[y, x - 1] == 0:
                labels[y, x - 1] = current
                stack[top] = y * w + x - 1
                top += 1
            if x + 1 < w and src[y, x + 1] and labels[y, x + 1] == 0:
                labels[y, x + 1] = current
                stack[top] = y * w + x + 1
                top += 1
    return labels_arr, current
