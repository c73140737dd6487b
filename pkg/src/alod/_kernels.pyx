# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled box kernels: pairwise IoU, greedy NMS and greedy matching.

Mirrors alod._kernels_py exactly; the arithmetic and tie rules must stay in
lockstep so both backends return identical results.
"""

import numpy as np


cdef inline double _pair_iou(double ax1, double ay1, double ax2, double ay2,
                             double bx1, double by1, double bx2, double by2) nogil:
    cdef double ix = min(ax2, bx2) - max(ax1, bx1)
    cdef double iy = min(ay2, by2) - max(ay1, by1)
    if ix < 0.0:
        ix = 0.0
    if iy < 0.0:
        iy = 0.0
    cdef double inter = ix * iy
    cdef double area_a = (ax2 - ax1) * (ay2 - ay1)
    cdef double area_b = (bx2 - bx1) * (by2 - by1)
    return inter / (area_a + area_b - inter)


def iou_matrix(a, b):
    """Pairwise intersection-over-union for corner-form boxes (n,4) x (m,4)."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    out = np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return out
    cdef double[:, ::1] av = a
    cdef double[:, ::1] bv = b
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(av.shape[0]):
            for j in range(bv.shape[0]):
                ov[i, j] = _pair_iou(av[i, 0], av[i, 1], av[i, 2], av[i, 3],
                                     bv[j, 0], bv[j, 1], bv[j, 2], bv[j, 3])
    return out


def nms_keep(boxes, scores, double iou_threshold):
    """Greedy NMS; kept indices by descending score, stable ties, strict suppression."""
    boxes = np.ascontiguousarray(boxes, dtype=np.float64)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    cdef Py_ssize_t n = boxes.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order_arr = np.argsort(-scores, kind="stable").astype(np.int64)
    alive_arr = np.ones(n, dtype=np.uint8)
    kept_arr = np.empty(n, dtype=np.int64)
    cdef double[:, ::1] bv = boxes
    cdef long long[::1] order = order_arr
    cdef unsigned char[::1] alive = alive_arr
    cdef long long[::1] kept = kept_arr
    cdef Py_ssize_t rank, r, n_kept = 0
    cdef long long i, j
    cdef double v
    with nogil:
        for rank in range(n):
            i = order[rank]
            if not alive[i]:
                continue
            kept[n_kept] = i
            n_kept += 1
            for r in range(rank + 1, n):
                j = order[r]
                if not alive[j]:
                    continue
                v = _pair_iou(bv[i, 0], bv[i, 1], bv[i, 2], bv[i, 3],
                              bv[j, 0], bv[j, 1], bv[j, 2], bv[j, 3])
                if v > iou_threshold:
                    alive[j] = 0
    return kept_arr[:n_kept].copy()


def greedy_match(det_boxes, gt_boxes, double iou_threshold):
    """Match score-sorted detections to free ground-truth boxes (ties: lowest gt)."""
    det_boxes = np.ascontiguousarray(det_boxes, dtype=np.float64)
    gt_boxes = np.ascontiguousarray(gt_boxes, dtype=np.float64)
    cdef Py_ssize_t nd = det_boxes.shape[0]
    cdef Py_ssize_t ng = gt_boxes.shape[0]
    matched_arr = np.full(nd, -1, dtype=np.int64)
    if nd == 0 or ng == 0:
        return matched_arr
    taken_arr = np.zeros(ng, dtype=np.uint8)
    cdef double[:, ::1] dv = det_boxes
    cdef double[:, ::1] gv = gt_boxes
    cdef long long[::1] matched = matched_arr
    cdef unsigned char[::1] taken = taken_arr
    cdef Py_ssize_t d, g
    cdef long long best
    cdef double best_iou, v
    with nogil:
        for d in range(nd):
            best = -1
            best_iou = 0.0
            for g in range(ng):
                if taken[g]:
                    continue
                v = _pair_iou(dv[d, 0], dv[d, 1], dv[d, 2], dv[d, 3],
                              gv[g, 0], gv[g, 1], gv[g, 2], gv[g, 3])
                if v >= iou_threshold and v > best_iou:
                    best = g
                    best_iou = v
            if best >= 0:
                matched[d] = best
                taken[best] = 1
    return matched_arr
