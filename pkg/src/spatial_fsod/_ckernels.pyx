# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def row_normalize(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.zeros((n, m), dtype=np.float64)
    deg = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] d = deg
    cdef double s
    for i in range(n):
        s = 0.0
        for j in range(m):
            s += x[i, j]
        d[i] = s
        if s != 0.0:
            for j in range(m):
                o[i, j] = x[i, j] * (1.0 / s)
    return out, deg


def row_normalize_backward(double[:, ::1] g, double[:, ::1] x, double[:, ::1] out):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    res = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] r = res
    cdef double s, dot, inv
    for i in range(n):
        s = 0.0
        dot = 0.0
        for j in range(m):
            s += x[i, j]
            dot += g[i, j] * out[i, j]
        if s != 0.0:
            inv = 1.0 / s
            for j in range(m):
                r[i, j] = (g[i, j] - dot) * inv
    return res


cdef inline double _iou(double ax0, double ay0, double ax1, double ay1,
                        double bx0, double by0, double bx1, double by1) nogil:
    cdef double ix0 = ax0 if ax0 > bx0 else bx0
    cdef double iy0 = ay0 if ay0 > by0 else by0
    cdef double ix1 = ax1 if ax1 < bx1 else bx1
    cdef double iy1 = ay1 if ay1 < by1 else by1
    cdef double w = ix1 - ix0
    cdef double h = iy1 - iy0
    if w < 0.0:
        w = 0.0
    if h < 0.0:
        h = 0.0
    cdef double inter = w * h
    cdef double union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    if union > 0.0:
        return inter / union
    return 0.0


def iou_matrix(a, b):
    cdef double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            o[i, j] = _iou(A[i, 0], A[i, 1], A[i, 2], A[i, 3],
                           B[j, 0], B[j, 1], B[j, 2], B[j, 3])
    return out


def nms(boxes, scores, double thresh):
    cdef double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef cnp.int64_t[::1] order = np.argsort(
        -np.asarray(scores, dtype=np.float64), kind="stable").astype(np.int64)
    cdef Py_ssize_t n = bx.shape[0], a, b, i, j
    sup = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] s = sup
    keep = []
    for a in range(n):
        i = order[a]
        if s[i]:
            continue
        keep.append(i)
        for b in range(n):
            j = order[b]
            if _iou(bx[i, 0], bx[i, 1], bx[i, 2], bx[i, 3],
                    bx[j, 0], bx[j, 1], bx[j, 2], bx[j, 3]) >= thresh:
                s[j] = 1
    return np.array(keep, dtype=np.int64)


def greedy_match(det_boxes, gt_boxes, double thresh):
    cdef double[:, ::1] D = np.ascontiguousarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] G = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = D.shape[0], m = G.shape[0], d, j, best
    cdef double v, best_iou
    taken = np.zeros(m, dtype=np.uint8)
    cdef unsigned char[::1] t = taken
    match = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] mt = match
    for d in range(n):
        best = -1
        best_iou = -1.0
        for j in range(m):
            if t[j]:
                continue
            v = _iou(D[d, 0], D[d, 1], D[d, 2], D[d, 3], G[j, 0], G[j, 1], G[j, 2], G[j, 3])
            if v >= thresh and v > best_iou:
                best = j
                best_iou = v
        if best >= 0:
            t[best] = 1
            mt[d] = best
    return match
