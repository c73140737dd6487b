"""Detection post-processing: score thresholding and greedy NMS.

Fixed conventions (they decide which detections reach the query scores):
keep on score >= threshold, suppress on IoU strictly greater than the NMS
threshold, break score ties by input order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from alod import kernels
from alod.types import BoundingBox, Detection


@dataclass(frozen=True)
class PostprocConfig:
    score_threshold: float = 0.5
    nms_iou: float = 0.5
    per_class: bool = False

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(f"score_threshold {self.score_threshold} outside [0, 1]")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou {self.nms_iou} outside [0, 1]")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def filter_score(dets: Sequence[Detection], score_threshold: float) -> list[Detection]:
    """Keep detections with score >= threshold, preserving order."""
    return [d for d in dets if d.score >= score_threshold]


def filter_score_indices(scores: np.ndarray, score_threshold: float) -> np.ndarray:
    return np.nonzero(np.asarray(scores) >= score_threshold)[0]


def nms_indices(
    boxes: np.ndarray,
    scores: np.ndarray,
    iou_threshold: float,
    class_ids: np.ndarray | None = None,
) -> np.ndarray:
    """Indices surviving greedy NMS, ordered by descending score.

    With class_ids given, suppression runs independently per class and the
    surviving indices are re-merged in descending score order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    if class_ids is None:
        return kernels.nms_keep(boxes, scores, iou_threshold)
    kept: list[int] = []
    for cls in np.unique(class_ids):
        members = np.nonzero(class_ids == cls)[0]
        local = kernels.nms_keep(boxes[members], scores[members], iou_threshold)
        kept.extend(int(members[i]) for i in local)
    kept_arr = np.asarray(kept, dtype=np.int64)
    order = np.argsort(-scores[kept_arr], kind="stable")
    return kept_arr[order]


def nms(
    dets: Sequence[Detection], iou_threshold: float, per_class: bool = False
) -> list[Detection]:
    """Greedy NMS over detections; returns survivors sorted by descending score."""
    if not dets:
        return []
    boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    class_ids = (
        np.array([d.argmax_class for d in dets], dtype=np.int64) if per_class else None
    )
    keep = nms_indices(boxes, scores, iou_threshold, class_ids)
    return [dets[i] for i in keep]


def postprocess(dets: Sequence[Detection], config: PostprocConfig) -> list[Detection]:
    """Score thresholding followed by NMS."""
    return nms(filter_score(dets, config.score_threshold), config.nms_iou, config.per_class)


def postprocess_indices(
    boxes: np.ndarray,
    scores: np.ndarray,
    config: PostprocConfig,
    class_ids: np.ndarray | None = None,
) -> np.ndarray:
    """Array variant of postprocess returning surviving indices."""
    keep = filter_score_indices(scores, config.score_threshold)
    if keep.size == 0:
        return keep
    survivors = nms_indices(
        np.asarray(boxes)[keep],
        np.asarray(scores)[keep],
        config.nms_iou,
        None if class_ids is None else np.asarray(class_ids)[keep],
    )
    return keep[survivors]
