"""Pure-numpy implementations of the box kernels.

Used when the compiled extension is unavailable; both backends must return
bit-identical results (same arithmetic, same tie rules).
"""

from __future__ import annotations

import numpy as np


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise intersection-over-union for corner-form boxes (n,4) x (m,4)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    ix = np.maximum(0.0, np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]))
    iy = np.maximum(0.0, np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]))
    inter = ix * iy
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def nms_keep(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Greedy non-maximum suppression.

    Returns kept indices ordered by descending score; equal scores keep
    input order. A detection is suppressed when its IoU with an already
    kept detection strictly exceeds the threshold.
    """
    boxes = np.asarray(boxes, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    n = boxes.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable").astype(np.int64)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    kept: list[int] = []
    alive = np.ones(n, dtype=bool)
    for rank in range(n):
        i = order[rank]
        if not alive[i]:
            continue
        kept.append(int(i))
        rest = order[rank + 1 :]
        rest = rest[alive[rest]]
        if rest.size == 0:
            continue
        ix = np.maximum(0.0, np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0]))
        iy = np.maximum(0.0, np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1]))
        inter = ix * iy
        iou = inter / (areas[i] + areas[rest] - inter)
        alive[rest[iou > iou_threshold]] = False
    return np.asarray(kept, dtype=np.int64)


def greedy_match(det_boxes: np.ndarray, gt_boxes: np.ndarray, iou_threshold: float) -> np.ndarray:
    """Match detections (already sorted by descending score) to ground truth.

    Each detection takes the still-unmatched ground-truth box with the
    highest IoU at or above the threshold (ties: lowest gt index). Returns
    the matched gt index per detection, -1 for unmatched.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64)
    nd = det_boxes.shape[0]
    ng = gt_boxes.shape[0]
    matched = np.full(nd, -1, dtype=np.int64)
    if nd == 0 or ng == 0:
        return matched
    iou = iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(ng, dtype=bool)
    for d in range(nd):
        best = -1
        best_iou = 0.0
        for g in range(ng):
            if taken[g]:
                continue
            v = iou[d, g]
            if v >= iou_threshold and v > best_iou:
                best = g
                best_iou = v
        if best >= 0:
            matched[d] = best
            taken[best] = True
    return matched
