"""Independent reference implementations used only by the tests.

These deliberately avoid the library code paths: inline IoU arithmetic,
explicit greedy loops and direct enumeration of the precision-recall curve.
"""

from __future__ import annotations


def box_iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    ix = min(ax2, bx2) - max(ax1, bx1)
    iy = min(ay2, by2) - max(ay1, by1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def nms_reference(boxes, scores, iou_threshold):
    """Greedy NMS by explicit elimination; returns kept indices, score order."""
    remaining = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [
            i for i in remaining if box_iou(boxes[best], boxes[i]) <= iou_threshold
        ]
    return kept


def map50_reference(preds_by_image, gts_by_image, num_classes, iou_threshold=0.5):
    """mAP@50 by direct enumeration.

    preds_by_image: {image_id: [(box, score, class_id), ...]}
    gts_by_image:   {image_id: [(box, class_id), ...]}
    """
    aps = []
    for cls in range(num_classes):
        n_gt = sum(1 for gts in gts_by_image.values() for _, c in gts if c == cls)
        if n_gt == 0:
            continue
        scored = []  # (score, image_id, det_index, is_tp)
        for image_id, preds in preds_by_image.items():
            gts = [g for g, c in gts_by_image.get(image_id, []) if c == cls]
            taken = [False] * len(gts)
            order = sorted(
                (i for i, p in enumerate(preds) if p[2] == cls),
                key=lambda i: (-preds[i][1], i),
            )
            for det_idx in order:
                box, score, _ = preds[det_idx]
                best, best_iou = -1, 0.0
                for g, gt_box in enumerate(gts):
                    if taken[g]:
                        continue
                    v = box_iou(box, gt_box)
                    if v >= iou_threshold and v > best_iou:
                        best, best_iou = g, v
                tp = best >= 0
                if tp:
                    taken[best] = True
                scored.append((score, image_id, det_idx, tp))
        scored.sort(key=lambda r: (-r[0], r[1], r[2]))
        precisions = []
        tp_count = 0
        for k, row in enumerate(scored):
            if row[3]:
                tp_count += 1
            precisions.append(tp_count / (k + 1))
        ap = 0.0
        for k, row in enumerate(scored):
            if row[3]:
                ap += max(precisions[k:]) / n_gt
        aps.append(ap)
    if not aps:
        raise ValueError("no ground truth at all")
    return sum(aps) / len(aps)
