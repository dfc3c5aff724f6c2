# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.  Mirrors ``_kernels_py`` exactly (see there for layouts)."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    cdef floating[:, :, :, ::1] xh = np.ascontiguousarray(np.transpose(x, (0, 2, 3, 1)))
    out = np.zeros((n, ho, wo, kh, kw, c), dtype=dtype)
    cdef floating[:, :, :, :, :, ::1] cols = out
    cdef Py_ssize_t ci, i, j, b, oy, ox, iy, ix, ix0, t, run = kw * c
    cdef floating* src
    cdef floating* dst
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    ix0 = ox * stride - pad
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        if ix0 >= 0 and ix0 + kw <= w:
                            # the whole kernel row is one contiguous run in NHWC
                            src = &xh[b, iy, ix0, 0]
                            dst = &cols[b, oy, ox, i, 0, 0]
                            for t in range(run):
                                dst[t] = src[t]
                            continue
                        for j in range(kw):
                            ix = ix0 + j
                            if ix >= 0 and ix < w:
                                for ci in range(c):
                                    cols[b, oy, ox, i, j, ci] = xh[b, iy, ix, ci]
    return out


def col2im(floating[:, :, :, :, :, ::1] cols, int n, int c, int h, int w,
           int kh, int kw, int stride, int pad):
    cdef Py_ssize_t ho = cols.shape[1], wo = cols.shape[2]
    dtype = np.float32 if floating is float else np.float64
    acc = np.zeros((n, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] xh = acc
    cdef Py_ssize_t ci, i, j, b, oy, ox, iy, ix, ix0, t, run = kw * c
    cdef floating* src
    cdef floating* dst
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    ix0 = ox * stride - pad
                    for i in range(kh):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        if ix0 >= 0 and ix0 + kw <= w:
                            src = &cols[b, oy, ox, i, 0, 0]
                            dst = &xh[b, iy, ix0, 0]
                            for t in range(run):
                                dst[t] += src[t]
                            continue
                        for j in range(kw):
                            ix = ix0 + j
                            if ix >= 0 and ix < w:
                                for ci in range(c):
                                    xh[b, iy, ix, ci] += cols[b, oy, ox, i, j, ci]
    return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))


def maxpool_forward(floating[:, :, :, ::1] x, int k, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1, wo = (w - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_a = np.empty((n, c, ho, wo), dtype=dtype)
    arg_a = np.empty((n, c, ho, wo), dtype=np.int64)
    cdef floating[:, :, :, ::1] out = out_a
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_a
    cdef Py_ssize_t b, ci, oy, ox, i, j, best_idx
    cdef floating best, v
    with nogil:
        for b in range(n):
            for ci in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        best = x[b, ci, oy * stride, ox * stride]
                        best_idx = 0
                        for i in range(k):
                            for j in range(k):
                                v = x[b, ci, oy * stride + i, ox * stride + j]
                                if v > best:
                                    best = v
                                    best_idx = i * k + j
                        out[b, ci, oy, ox] = best
                        arg[b, ci, oy, ox] = best_idx
    return out_a, arg_a


def maxpool_backward(floating[:, :, :, ::1] grad, cnp.int64_t[:, :, :, ::1] arg,
                     int h, int w, int k, int stride):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], ho = grad.shape[2], wo = grad.shape[3]
    dtype = np.float32 if floating is float else np.float64
    dx_a = np.zeros((n, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = dx_a
    cdef Py_ssize_t b, ci, oy, ox, a
    with nogil:
        for b in range(n):
            for ci in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        a = arg[b, ci, oy, ox]
                        dx[b, ci, oy * stride + a // k, ox * stride + a % k] += grad[b, ci, oy, ox]
    return dx_a


def masked_mean(floating[:, :, :, ::1] x, double threshold):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    dtype = np.float32 if floating is float else np.float64
    mean_a = np.zeros((n, c), dtype=dtype)
    count_a = np.zeros((n, c), dtype=np.int64)
    cdef floating[:, ::1] mean = mean_a
    cdef cnp.int64_t[:, ::1] count = count_a
    cdef Py_ssize_t b, ci, i, j, cnt
    cdef floating total, v
    with nogil:
        for b in range(n):
            for ci in range(c):
                total = 0
                cnt = 0
                for i in range(h):
                    for j in range(w):
                        v = x[b, ci, i, j]
                        if v >= threshold:
                            total = total + v
                            cnt = cnt + 1
                count[b, ci] = cnt
                if cnt > 0:
                    mean[b, ci] = total / cnt
    return mean_a, count_a


def nearest_center(double[:, ::1] points, double[:, ::1] centers):
    cdef Py_ssize_t n = points.shape[0], k = centers.shape[0], d = points.shape[1]
    labels_a = np.empty(n, dtype=np.int64)
    dist_a = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_a
    cdef double[::1] dist = dist_a
    cdef Py_ssize_t p, q, t, best_q
    cdef double best, acc, diff
    with nogil:
        for p in range(n):
            best = -1.0
            best_q = 0
            for q in range(k):
                acc = 0.0
                for t in range(d):
                    diff = points[p, t] - centers[q, t]
                    acc = acc + diff * diff
                if best < 0 or acc < best:
                    best = acc
                    best_q = q
            labels[p] = best_q
            dist[p] = best
    return labels_a, dist_a
