"""Both kernel backends must agree exactly; IoU is cross-checked against
polygon geometry."""

import numpy as np
import pytest
from shapely.geometry import box as shapely_box

from alod import _kernels_py, kernels


def random_boxes(rng, n, span=100.0):
    corners = rng.uniform(0, span, (n, 2))
    sizes = rng.uniform(1.0, span / 2, (n, 2))
    return np.hstack([corners, corners + sizes])


def test_backend_identified():
    assert kernels.BACKEND in ("compiled", "numpy")


@pytest.mark.parametrize("trial", range(50))
def test_backends_agree(trial):
    rng = np.random.default_rng(1000 + trial)
    n = int(rng.integers(0, 12))
    boxes = random_boxes(rng, n)
    scores = rng.uniform(0, 1, n)
    thr = float(rng.uniform(0.1, 0.9))
    assert np.array_equal(
        kernels.nms_keep(boxes, scores, thr), _kernels_py.nms_keep(boxes, scores, thr)
    )
    other = random_boxes(rng, int(rng.integers(0, 6)))
    assert np.array_equal(
        kernels.iou_matrix(boxes, other), _kernels_py.iou_matrix(boxes, other)
    )
    assert np.array_equal(
        kernels.greedy_match(boxes, other, 0.5), _kernels_py.greedy_match(boxes, other, 0.5)
    )


def test_iou_matrix_against_shapely():
    rng = np.random.default_rng(42)
    a = random_boxes(rng, 8)
    b = random_boxes(rng, 5)
    got = kernels.iou_matrix(a, b)
    for i in range(8):
        for j in range(5):
            pa = shapely_box(a[i, 0], a[i, 1], a[i, 2], a[i, 3])
            pb = shapely_box(b[j, 0], b[j, 1], b[j, 2], b[j, 3])
            expected = pa.intersection(pb).area / pa.union(pb).area
            assert got[i, j] == pytest.approx(expected, abs=1e-12)


def test_nms_tie_break_stable():
    boxes = np.array([[0, 0, 10, 10], [100, 100, 110, 110], [200, 200, 210, 210]], float)
    scores = np.array([0.5, 0.5, 0.5])
    keep = kernels.nms_keep(boxes, scores, 0.5)
    assert keep.tolist() == [0, 1, 2]


def test_greedy_match_prefers_highest_iou_free_gt():
    dets = np.array([[0, 0, 10, 10]], float)
    gts = np.array([[1, 1, 11, 11], [0, 0, 10, 10]], float)
    matched = kernels.greedy_match(dets, gts, 0.5)
    assert matched.tolist() == [1]
