import numpy as np
import pytest

from alod.postproc import PostprocConfig, filter_score, iou, nms, postprocess
from alod.types import BoundingBox, Detection

from .conftest import random_detections
from .oracles import nms_reference


def det(x0, y0, x1, y1, score):
    return Detection(BoundingBox(x0, y0, x1, y1), score, (1.0,))


class TestIou:
    def test_identical(self):
        b = BoundingBox(3, 4, 9, 11)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(5, 5, 6, 6)) == 0.0

    def test_half_overlap(self):
        a = BoundingBox(0, 0, 10, 10)
        b = BoundingBox(5, 0, 15, 10)
        assert iou(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            x = rng.uniform(0, 50, 4)
            a = BoundingBox(x[0], x[1], x[0] + 1 + x[2], x[1] + 1 + x[3])
            y = rng.uniform(0, 50, 4)
            b = BoundingBox(y[0], y[1], y[0] + 1 + y[2], y[1] + 1 + y[3])
            assert iou(a, b) == iou(b, a)
            assert 0.0 <= iou(a, b) <= 1.0


class TestFilterScore:
    def test_zero_threshold_keeps_all(self):
        dets = [det(0, 0, 1, 1, s) for s in (0.1, 0.9)]
        assert filter_score(dets, 0.0) == dets

    def test_only_perfect_scores_survive_threshold_one(self):
        dets = [det(0, 0, 1, 1, 0.999), det(0, 0, 1, 1, 1.0)]
        assert [d.score for d in filter_score(dets, 1.0)] == [1.0]

    def test_geq_convention(self):
        dets = [det(0, 0, 1, 1, s) for s in (0.3, 0.5, 0.7)]
        assert [d.score for d in filter_score(dets, 0.5)] == [0.5, 0.7]


class TestNms:
    def test_singleton(self):
        d = det(0, 0, 10, 10, 0.4)
        assert nms([d], 0.5) == [d]

    def test_full_overlap_keeps_top(self):
        a = det(0, 0, 10, 10, 0.9)
        b = det(0, 0, 10, 10, 0.8)
        assert nms([b, a], 0.5) == [a]

    def test_partial_overlap_trace(self):
        a = det(0, 0, 10, 10, 0.9)
        b = det(0, 2.5, 10, 12.5, 0.8)  # IoU(a, b) = 0.6
        c = det(50, 50, 60, 60, 0.7)
        assert iou(a.box, b.box) == pytest.approx(0.6, abs=1e-12)
        assert nms([a, b, c], 0.5) == [a, c]

    def test_invariants_on_random_sets(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            dets = random_detections(rng, int(rng.integers(1, 11)))
            thr = float(rng.uniform(0.1, 0.9))
            out = nms(dets, thr)
            assert set(id(d) for d in out) <= set(id(d) for d in dets)
            top = max(dets, key=lambda d: d.score)
            assert any(d is top for d in out) or any(
                d.score == top.score for d in out
            )
            for i, a in enumerate(out):
                for b in out[i + 1 :]:
                    assert iou(a.box, b.box) <= thr
            assert all(out[i].score >= out[i + 1].score for i in range(len(out) - 1))

    def test_bruteforce_equivalence(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            dets = random_detections(rng, int(rng.integers(0, 11)))
            thr = float(rng.uniform(0.1, 0.9))
            got = nms(dets, thr)
            boxes = [d.box.as_tuple() for d in dets]
            scores = [d.score for d in dets]
            expected = [dets[i] for i in nms_reference(boxes, scores, thr)]
            assert got == expected

    def test_per_class_mode(self):
        a = Detection(BoundingBox(0, 0, 10, 10), 0.9, (1.0, 0.0))
        b = Detection(BoundingBox(0, 0, 10, 10), 0.8, (0.0, 1.0))
        assert nms([a, b], 0.5, per_class=False) == [a]
        assert nms([a, b], 0.5, per_class=True) == [a, b]


def test_postprocess_order():
    # the low-score overlapping box is removed by thresholding, not NMS
    high = det(0, 0, 10, 10, 0.9)
    low = det(0, 0, 10, 10, 0.2)
    far = det(50, 50, 60, 60, 0.6)
    out = postprocess([high, low, far], PostprocConfig(score_threshold=0.5, nms_iou=0.5))
    assert out == [high, far]


def test_config_validation():
    with pytest.raises(ValueError):
        PostprocConfig(score_threshold=1.5)
    with pytest.raises(ValueError):
        PostprocConfig(nms_iou=-0.1)
