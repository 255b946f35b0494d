# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: im2col / col2im gathers and max-pool fwd/bwd.

Float32 accumulation order matches orchard.kernels.fallback exactly so the
two backends are bit-identical; see that module for the layout contracts.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def im2col(const float[:, :, :, ::1] x, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hp = x.shape[2], wp = x.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1
    cdef Py_ssize_t wo = (wp - kw) // sw + 1
    out_arr = np.empty((n, c * kh * kw, ho * wo), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oh, ow, row
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for oh in range(ho):
                        for ow in range(wo):
                            out[b, row, oh * wo + ow] = x[b, ch, oh * sh + i, ow * sw + j]
    return out_arr


def col2im(const float[:, :, ::1] cols, int c, int hp, int wp, int kh, int kw, int sh, int sw):
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (hp - kh) // sh + 1
    cdef Py_ssize_t wo = (wp - kw) // sw + 1
    x_arr = np.zeros((n, c, hp, wp), dtype=np.float32)
    cdef float[:, :, :, ::1] x = x_arr
    cdef Py_ssize_t b, ch, i, j, oh, ow, row
    # (i, j) outermost: per-cell accumulation order matches the fallback slabs
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ch * kh + i) * kw + j
                    for oh in range(ho):
                        for ow in range(wo):
                            x[b, ch, oh * sh + i, ow * sw + j] += cols[b, row, oh * wo + ow]
    return x_arr


def maxpool_forward(const float[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hp = x.shape[2], wp = x.shape[3]
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    out_arr = np.empty((n, c, ho, wo), dtype=np.float32)
    am_arr = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef float[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] am = am_arr
    cdef Py_ssize_t b, ch, oh, ow, i, j, h0, w0
    cdef float best, v
    cdef Py_ssize_t best_pos
    for b in range(n):
        for ch in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    h0 = oh * stride
                    w0 = ow * stride
                    best = x[b, ch, h0, w0]
                    best_pos = h0 * wp + w0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, ch, h0 + i, w0 + j]
                            if v > best:  # strict: first row-major max wins ties
                                best = v
                                best_pos = (h0 + i) * wp + (w0 + j)
                    out[b, ch, oh, ow] = best
                    am[b, ch, oh, ow] = best_pos
    return out_arr, am_arr


def maxpool_backward(const float[:, :, :, ::1] grad, const long long[:, :, :, ::1] argmax,
                     int hp, int wp):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    out_arr = np.zeros((n, c, hp, wp), dtype=np.float32)
    cdef float[:, :, ::1] out = out_arr.reshape(n, c, hp * wp)
    cdef Py_ssize_t b, ch, oh, ow
    for b in range(n):
        for ch in range(c):
            for oh in range(ho):
                for ow in range(wo):
                    out[b, ch, argmax[b, ch, oh, ow]] += grad[b, ch, oh, ow]
    return out_arr
