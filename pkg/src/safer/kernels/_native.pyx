# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution/pooling kernels.

Semantics match safer.kernels.numpy_backend exactly (valid padding, stride 1,
channels-last, 2x2 floor pooling); the test suite asserts bit-level agreement
between the two backends on random inputs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "native"


def conv2d_valid(x, w, b):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t kh = wv.shape[0], kw = wv.shape[1]
    cdef Py_ssize_t cin = wv.shape[2], cout = wv.shape[3]
    if xv.shape[2] != cin:
        raise ValueError(
            f"input shape {tuple(np.asarray(x).shape)} incompatible with weights "
            f"{tuple(np.asarray(w).shape)}"
        )
    cdef Py_ssize_t ho = xv.shape[0] - kh + 1
    cdef Py_ssize_t wo = xv.shape[1] - kw + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(
            f"input {tuple(np.asarray(x).shape[:2])} smaller than kernel "
            f"({kh}, {kw}); no valid output"
        )
    out = np.empty((ho, wo, cout), dtype=np.float64)
    cdef double[:, :, ::1] yv = out
    cdef Py_ssize_t i, j, co, a, bb, ci
    cdef double xval
    # output-channel loop innermost: contiguous in y and w, auto-vectorizable
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                yv[i, j, co] = bv[co]
            for a in range(kh):
                for bb in range(kw):
                    for ci in range(cin):
                        xval = xv[i + a, j + bb, ci]
                        for co in range(cout):
                            yv[i, j, co] += xval * wv[a, bb, ci, co]
    return out


def conv2d_valid_bwd(x, w, dy):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t kh = wv.shape[0], kw = wv.shape[1]
    cdef Py_ssize_t cin = wv.shape[2], cout = wv.shape[3]
    cdef Py_ssize_t ho = dyv.shape[0], wo = dyv.shape[1]

    dx_arr = np.zeros((xv.shape[0], xv.shape[1], cin), dtype=np.float64)
    dw_arr = np.zeros((kh, kw, cin, cout), dtype=np.float64)
    db_arr = np.zeros(cout, dtype=np.float64)
    cdef double[:, :, ::1] dxv = dx_arr
    cdef double[:, :, :, ::1] dwv = dw_arr
    cdef double[::1] dbv = db_arr

    cdef Py_ssize_t i, j, co, a, bb, ci
    cdef double xval, acc
    for i in range(ho):
        for j in range(wo):
            for co in range(cout):
                dbv[co] += dyv[i, j, co]
            for a in range(kh):
                for bb in range(kw):
                    for ci in range(cin):
                        xval = xv[i + a, j + bb, ci]
                        acc = 0.0
                        # contiguous over co in w, dw and dy: vectorizable
                        for co in range(cout):
                            dwv[a, bb, ci, co] += xval * dyv[i, j, co]
                            acc += wv[a, bb, ci, co] * dyv[i, j, co]
                        dxv[i + a, j + bb, ci] += acc
    return dx_arr, dw_arr, db_arr


def maxpool2(x):
    cdef double[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t h = xv.shape[0], w = xv.shape[1], c = xv.shape[2]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    if ho == 0 or wo == 0:
        raise ValueError(f"input {tuple(np.asarray(x).shape)} too small for 2x2 pooling")
    y_arr = np.empty((ho, wo, c), dtype=np.float64)
    arg_arr = np.empty((ho, wo, c), dtype=np.int32)
    cdef double[:, :, ::1] yv = y_arr
    cdef int[:, :, ::1] argv = arg_arr
    cdef Py_ssize_t i, j, k, di, dj
    cdef double best, v
    cdef int besta
    for i in range(ho):
        for j in range(wo):
            for k in range(c):
                best = xv[2 * i, 2 * j, k]
                besta = 0
                for di in range(2):
                    for dj in range(2):
                        v = xv[2 * i + di, 2 * j + dj, k]
                        if v > best:
                            best = v
                            besta = 2 * di + dj
                yv[i, j, k] = best
                argv[i, j, k] = besta
    return y_arr, arg_arr


def maxpool2_bwd(arg, dy, in_shape):
    cdef int[:, :, ::1] argv = np.ascontiguousarray(arg, dtype=np.int32)
    cdef double[:, :, ::1] dyv = np.ascontiguousarray(dy, dtype=np.float64)
    cdef Py_ssize_t h = in_shape[0], w = in_shape[1], c = in_shape[2]
    cdef Py_ssize_t ho = dyv.shape[0], wo = dyv.shape[1]
    dx_arr = np.zeros((h, w, c), dtype=np.float64)
    cdef double[:, :, ::1] dxv = dx_arr
    cdef Py_ssize_t i, j, k
    cdef int a
    for i in range(ho):
        for j in range(wo):
            for k in range(c):
                a = argv[i, j, k]
                dxv[2 * i + a // 2, 2 * j + a % 2, k] += dyv[i, j, k]
    return dx_arr
