# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Mirrors ``_fallback`` bit for bit."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _iou(double ax1, double ay1, double ax2, double ay2,
                        double bx1, double by1, double bx2, double by2) nogil:
    cdef double area_a = (ax2 - ax1) * (ay2 - ay1)
    cdef double area_b = (bx2 - bx1) * (by2 - by1)
    cdef double iw = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    cdef double ih = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    cdef double inter
    cdef double union_
    if iw < 0.0:
        iw = 0.0
    if ih < 0.0:
        ih = 0.0
    inter = iw * ih
    union_ = (area_a + area_b) - inter
    if union_ > 0.0:
        return inter / union_
    return 0.0


def iou_matrix(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n = av.shape[0], m = bv.shape[0], i, j
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(n):
            for j in range(m):
                ov[i, j] = _iou(av[i, 0], av[i, 1], av[i, 2], av[i, 3],
                                bv[j, 0], bv[j, 1], bv[j, 2], bv[j, 3])
    return out


def greedy_nms(boxes, rank, conf, double epsilon, bint cluster):
    cdef double[:, ::1] bv = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    cdef double[::1] cv = np.ascontiguousarray(conf, dtype=np.float64)
    order_arr = np.argsort(-np.ascontiguousarray(rank, dtype=np.float64), kind="stable").astype(np.int64)
    cdef cnp.int64_t[::1] order = order_arr
    cdef Py_ssize_t n = order.shape[0], a, b, m, j
    alive_arr = np.ones(n, dtype=np.uint8)
    cdef unsigned char[::1] alive = alive_arr
    keep_arr = np.empty(n, dtype=np.int64)
    rep_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] keep = keep_arr
    cdef double[::1] rep = rep_arr
    cdef Py_ssize_t n_keep = 0
    cdef double p_m
    with nogil:
        for a in range(n):
            if not alive[a]:
                continue
            m = order[a]
            p_m = cv[m]
            for b in range(a + 1, n):
                if not alive[b]:
                    continue
                j = order[b]
                if _iou(bv[m, 0], bv[m, 1], bv[m, 2], bv[m, 3],
                        bv[j, 0], bv[j, 1], bv[j, 2], bv[j, 3]) > epsilon:
                    alive[b] = 0
                    if cluster and cv[j] > p_m:
                        p_m = cv[j]
            keep[n_keep] = m
            rep[n_keep] = p_m
            n_keep += 1
    return keep_arr[:n_keep].copy(), rep_arr[:n_keep].copy()


def match_greedy(ious, thresholds, gt_ignore, det_ignore):
    cdef double[:, ::1] iv = np.ascontiguousarray(ious, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(thresholds, dtype=np.float64)
    cdef unsigned char[::1] gi = np.ascontiguousarray(gt_ignore, dtype=np.uint8)
    cdef unsigned char[::1] di = np.ascontiguousarray(det_ignore, dtype=np.uint8)
    cdef Py_ssize_t n_det = iv.shape[0], n_gt = iv.shape[1], n_thr = tv.shape[0]
    cdef Py_ssize_t t, d, g, best, p
    cdef double thr, v, best_iou
    state_arr = np.zeros((n_thr, n_det), dtype=np.int8)
    cdef signed char[:, ::1] state = state_arr
    taken_arr = np.zeros(n_gt, dtype=np.uint8)
    cdef unsigned char[::1] taken = taken_arr
    with nogil:
        for t in range(n_thr):
            thr = tv[t]
            for g in range(n_gt):
                taken[g] = 0
            for d in range(n_det):
                best = -1
                best_iou = -1.0
                for p in range(2):
                    for g in range(n_gt):
                        if taken[g] or gi[g] != p:
                            continue
                        v = iv[d, g]
                        if v >= thr and v > best_iou:
                            best = g
                            best_iou = v
                    if best >= 0:
                        break
                if best >= 0:
                    taken[best] = 1
                    state[t, d] = -1 if gi[best] else 1
                elif di[d]:
                    state[t, d] = -1
    return state_arr
