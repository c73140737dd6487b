import math

import numpy as np
import pytest
from scipy import stats as scipy_stats

from alod.evaluation import (
    ALCurve,
    MaxPerformanceTable,
    MethodRanking,
    auc,
    average_precision,
    build_curve,
    correlation_history,
    cross_collection_matrix,
    crossing,
    crossing_ranking,
    fractional_ranks,
    map50,
    match_detections,
    spearman,
)
from alod.runlog import ALStepRecord, RunLog
from alod.types import Annotation, BoundingBox, Detection, ImageRecord

from .oracles import map50_reference


def det(box, score, cls, num_classes=3):
    probs = [0.0] * num_classes
    probs[cls] = 1.0
    return Detection(BoundingBox(*box), score, tuple(probs))


def gt(box, cls):
    return Annotation(BoundingBox(*box), cls)


def record(image_id, gts, size=100):
    return ImageRecord(image_id, f"{image_id}.png", size, size, tuple(gts))


def make_log(strategy, seed, xs, ys, instances=None, queried=()):
    steps = []
    for i, (x, y) in enumerate(zip(xs, ys)):
        steps.append(
            ALStepRecord(
                step=i,
                labeled_images=int(x),
                labeled_instances=int(instances[i]) if instances else int(3 * x),
                map50=float(y),
            )
        )
    return RunLog(strategy=strategy, seed=seed, dataset="fixture", steps=tuple(steps), fingerprint="f")


class TestMatching:
    def test_exact_hit(self):
        flags, counts = match_detections([det((0, 0, 10, 10), 0.9, 0)], [gt((0, 0, 10, 10), 0)])
        assert flags == [True]
        assert counts == {0: 1}

    def test_single_match_rule(self):
        preds = [det((0, 0, 10, 10), 0.9, 0), det((1, 1, 11, 11), 0.8, 0)]
        flags, _ = match_detections(preds, [gt((0, 0, 10, 10), 0)])
        assert flags == [True, False]

    def test_below_threshold_is_fp(self):
        preds = [det((0, 0, 10, 4), 0.9, 0)]  # IoU 0.4 against the gt
        flags, _ = match_detections(preds, [gt((0, 0, 10, 10), 0)])
        assert flags == [False]

    def test_class_must_match(self):
        flags, _ = match_detections([det((0, 0, 10, 10), 0.9, 1)], [gt((0, 0, 10, 10), 0)])
        assert flags == [False]


class TestMap50:
    def test_perfect_predictions(self):
        records = [
            record(0, [gt((10, 10, 30, 30), 0), gt((50, 50, 70, 70), 1)]),
            record(1, [gt((5, 5, 25, 25), 2)]),
        ]
        preds = {
            0: [det((10, 10, 30, 30), 1.0, 0), det((50, 50, 70, 70), 1.0, 1)],
            1: [det((5, 5, 25, 25), 1.0, 2)],
        }
        assert map50(preds, records, num_classes=3) == 1.0

    def test_no_predictions(self):
        records = [record(0, [gt((10, 10, 30, 30), 0)])]
        assert map50({}, records, num_classes=3) == 0.0

    def test_hand_pr_curve(self):
        records = [
            record(0, [gt((0, 0, 10, 10), 0), gt((40, 40, 50, 50), 0)]),
        ]
        preds = {
            0: [
                det((0, 0, 10, 10), 0.9, 0),
                det((70, 70, 80, 80), 0.8, 0),
                det((40, 40, 50, 50), 0.7, 0),
            ]
        }
        assert map50(preds, records, num_classes=1) == pytest.approx(5 / 6, abs=1e-12)

    def test_zero_gt_errors(self):
        with pytest.raises(ValueError):
            map50({}, [record(0, [])], num_classes=2)

    def test_bruteforce_equivalence(self):
        rng = np.random.default_rng(77)
        for _ in range(1000):
            num_classes = int(rng.integers(1, 4))
            n_images = int(rng.integers(1, 6))
            records_list, preds, oracle_preds, oracle_gts = [], {}, {}, {}
            total_gt = 0
            for image_id in range(n_images):
                gts = []
                for _ in range(int(rng.integers(0, 4))):
                    x0, y0 = rng.uniform(0, 60, 2)
                    w, h = rng.uniform(5, 30, 2)
                    gts.append(gt((x0, y0, x0 + w, y0 + h), int(rng.integers(num_classes))))
                total_gt += len(gts)
                records_list.append(record(image_id, gts))
                dets = []
                for _ in range(int(rng.integers(0, 9))):
                    if gts and rng.random() < 0.6:
                        base = gts[int(rng.integers(len(gts)))]
                        b = np.array(base.box.as_tuple()) + rng.normal(0, 4, 4)
                        b[2] = max(b[2], b[0] + 1)
                        b[3] = max(b[3], b[1] + 1)
                        cls = base.category_id if rng.random() < 0.8 else int(rng.integers(num_classes))
                    else:
                        x0, y0 = rng.uniform(0, 60, 2)
                        w, h = rng.uniform(5, 30, 2)
                        b = (x0, y0, x0 + w, y0 + h)
                        cls = int(rng.integers(num_classes))
                    dets.append(det(tuple(b), float(rng.uniform(0, 1)), cls, num_classes))
                preds[image_id] = dets
                oracle_preds[image_id] = [
                    (d.box.as_tuple(), d.score, d.argmax_class) for d in dets
                ]
                oracle_gts[image_id] = [(g.box.as_tuple(), g.category_id) for g in gts]
            if total_gt == 0:
                continue
            got = map50(preds, records_list, num_classes)
            expected = map50_reference(oracle_preds, oracle_gts, num_classes)
            assert got == pytest.approx(expected, abs=1e-9)


class TestCurves:
    def test_single_seed_identity(self):
        log = make_log("a", 0, [100, 200, 300], [0.2, 0.5, 0.6])
        curve = build_curve([log], "images")
        assert curve.xs == (100, 200, 300)
        assert curve.means == (0.2, 0.5, 0.6)
        assert curve.stds == (0, 0, 0)

    def test_two_constant_seeds(self):
        logs = [
            make_log("a", 0, [100, 200], [0.4, 0.4]),
            make_log("a", 1, [100, 200], [0.6, 0.6]),
        ]
        curve = build_curve(logs, "images")
        assert curve.means == (0.5, 0.5)
        assert curve.stds == (pytest.approx(0.1), pytest.approx(0.1))

    def test_shared_budget_grid(self):
        logs = [make_log("a", s, [100, 200, 300], [0.1, 0.2, 0.3]) for s in range(3)]
        assert build_curve(logs, "images").xs == (100, 200, 300)

    def test_instance_axis_uses_instance_counts(self):
        log = make_log("a", 0, [100, 200], [0.1, 0.2], instances=[250, 520])
        assert build_curve([log], "instances").xs == (250, 520)

    def test_no_overlap_errors(self):
        logs = [
            make_log("a", 0, [100, 200], [0.1, 0.2]),
            make_log("a", 1, [300, 400], [0.1, 0.2]),
        ]
        with pytest.raises(ValueError):
            build_curve(logs, "images")


class TestAuc:
    def test_constant(self):
        c = ALCurve("images", (2, 7), (0.5, 0.5), (0, 0), 1)
        assert auc(c) == pytest.approx(0.5 * 5, abs=1e-12)

    def test_triangle(self):
        c = ALCurve("images", (0, 10), (0.0, 1.0), (0, 0), 1)
        assert auc(c) == pytest.approx(5.0, abs=1e-12)

    def test_two_trapezoids(self):
        c = ALCurve("images", (0, 1, 2), (0.0, 1.0, 0.0), (0, 0, 0), 1)
        assert auc(c) == pytest.approx(1.0, abs=1e-12)

    def test_additivity(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(2, 8))
            xs = np.cumsum(rng.uniform(1, 5, n))
            ys = rng.uniform(0, 1, n)
            c = ALCurve("images", tuple(xs), tuple(ys), (0,) * n, 1)
            x1 = float(rng.uniform(xs[0], xs[-1]))
            left = auc(c, x1)
            total = auc(c)
            y1 = float(np.interp(x1, xs, ys))
            tail_xs = [x1] + [x for x in xs if x > x1]
            tail_ys = [y1] + [y for x, y in zip(xs, ys) if x > x1]
            tail = sum(
                0.5 * (tail_ys[i] + tail_ys[i + 1]) * (tail_xs[i + 1] - tail_xs[i])
                for i in range(len(tail_xs) - 1)
            )
            assert left + tail == pytest.approx(total, abs=1e-9)

    def test_domain_checked(self):
        c = ALCurve("images", (0, 10), (0.0, 1.0), (0, 0), 1)
        with pytest.raises(ValueError):
            auc(c, 11)


class TestCrossing:
    def test_immediate(self):
        c = ALCurve("images", (100, 200), (0.95, 0.99), (0, 0), 1)
        assert crossing(c, 0.9) == 100

    def test_interpolation(self):
        c = ALCurve("images", (100, 200), (0.5, 0.9), (0, 0), 1)
        assert crossing(c, 0.7) == pytest.approx(150.0, abs=1e-12)

    def test_not_crossed(self):
        c = ALCurve("images", (100, 200), (0.5, 0.8), (0, 0), 1)
        assert crossing(c, 0.9) is None

    def test_monotone_in_level(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            xs = tuple(np.cumsum(rng.uniform(1, 5, n)))
            ys = tuple(rng.uniform(0, 1, n))
            c = ALCurve("images", xs, ys, (0,) * n, 1)
            l1, l2 = sorted(rng.uniform(0.05, 1.0, 2))
            c1, c2 = crossing(c, float(l1)), crossing(c, float(l2))
            if c2 is not None:
                assert c1 is not None and c1 <= c2


class TestSpearman:
    def test_identical(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0, abs=1e-12)

    def test_reversed(self):
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)

    def test_adjacent_transposition(self):
        assert spearman([1, 2, 3, 4, 5], [2, 1, 3, 4, 5]) == pytest.approx(0.9, abs=1e-12)

    def test_zero_variance_undefined(self):
        assert spearman([1, 1, 1], [1, 2, 3]) is None

    def test_symmetry_and_monotone_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = int(rng.integers(2, 10))
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            r1 = spearman(a, b)
            assert r1 == spearman(b, a)
            if r1 is not None:
                transformed = np.exp(2.0 * a) + 3.0
                assert spearman(transformed, b) == pytest.approx(r1, abs=1e-12)

    def test_matches_scipy_with_ties(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            n = int(rng.integers(3, 12))
            a = rng.integers(0, 4, n).astype(float)
            b = rng.integers(0, 4, n).astype(float)
            ours = spearman(a, b)
            expected = scipy_stats.spearmanr(a, b).statistic
            if ours is None:
                assert math.isnan(expected)
            else:
                assert ours == pytest.approx(expected, abs=1e-12)

    def test_fractional_ranks(self):
        assert fractional_ranks([10, 20, 20, 30]).tolist() == [1.0, 2.5, 2.5, 4.0]


def order_preserving_collections():
    # "fast" dominates "mid" dominates "slow" at every x
    collections = {}
    for name, offset in (("fast", 0.3), ("mid", 0.15), ("slow", 0.0)):
        logs = [
            make_log(name, seed, [100, 200, 300, 400], [0.2 + offset, 0.4 + offset, 0.55 + offset, 0.65 + offset])
            for seed in (0, 1)
        ]
        collections[name] = logs
    return collections


class TestCorrelationHistory:
    def test_order_preserving_gives_constant_one(self):
        collections = order_preserving_collections()
        reference = crossing_ranking(collections, level=0.6)
        for metric in ("map50", "auc"):
            history = correlation_history(collections, reference, metric=metric)
            assert all(r == pytest.approx(1.0, abs=1e-12) for r in history.rhos)
            assert history.rho_min == pytest.approx(1.0)
            assert history.rho_mean == pytest.approx(1.0)

    def test_two_strategy_sign_flip(self):
        collections = {
            "early": [make_log("early", 0, [100, 200, 300], [0.6, 0.65, 0.7])],
            "late": [make_log("late", 0, [100, 200, 300], [0.2, 0.65, 0.9])],
        }
        reference = MethodRanking((("early", 1.0), ("late", 2.0)), higher_is_better=False)
        history = correlation_history(collections, reference, metric="map50")
        assert history.rhos[0] == pytest.approx(1.0)
        assert history.rhos[-1] == pytest.approx(-1.0)

    def test_needs_two_strategies(self):
        collections = {"only": [make_log("only", 0, [100, 200], [0.1, 0.2])]}
        with pytest.raises(ValueError):
            correlation_history(collections, MethodRanking((("only", 1.0),), False))


class TestCrossCollectionMatrix:
    def test_identical_rankings(self):
        c = order_preserving_collections()
        names, matrix = cross_collection_matrix({"d1": c, "d2": c})
        assert names == ["d1", "d2"]
        assert np.allclose(np.diag(matrix), 1.0)
        assert matrix[0, 1] == pytest.approx(1.0)

    def test_transposition_value(self):
        xs = [100, 200]
        base = {
            f"s{i}": [make_log(f"s{i}", 0, xs, [0.1 * (i + 1), 0.1 * (i + 1)])]
            for i in range(5)
        }
        swapped = dict(base)
        swapped["s0"] = [make_log("s0", 0, xs, [0.2, 0.2])]
        swapped["s1"] = [make_log("s1", 0, xs, [0.1, 0.1])]
        _, matrix = cross_collection_matrix({"a": base, "b": swapped})
        assert matrix[0, 1] == pytest.approx(0.9, abs=1e-12)

    def test_mismatched_strategies_rejected(self):
        c = order_preserving_collections()
        other = {k: v for k, v in c.items() if k != "slow"}
        with pytest.raises(ValueError):
            cross_collection_matrix({"a": c, "b": other})


def test_average_precision_all_fp():
    assert average_precision(np.array([False, False]), 3) == 0.0


def test_auc_ranking_invariant_under_x_rescaling():
    rng = np.random.default_rng(21)
    for _ in range(50):
        xs = tuple(np.cumsum(rng.uniform(1, 5, 5)))
        curves = [
            ALCurve("images", xs, tuple(rng.uniform(0, 1, 5)), (0,) * 5, 1)
            for _ in range(4)
        ]
        factor = float(rng.uniform(0.1, 10))
        scaled = [
            ALCurve("images", tuple(x * factor for x in c.xs), c.means, c.stds, 1)
            for c in curves
        ]
        base_order = np.argsort([auc(c) for c in curves])
        scaled_order = np.argsort([auc(c) for c in scaled])
        assert base_order.tolist() == scaled_order.tolist()


def test_max_performance_table():
    table = MaxPerformanceTable.from_json_dict({"synth-digits": 0.962, "other": {"det": 0.5}})
    assert table.lookup("synth-digits") == 0.962
    assert table.lookup("other/det") == 0.5
    assert 0.9 * table.lookup("synth-digits") == pytest.approx(0.8658, abs=1e-12)
    with pytest.raises(KeyError):
        table.lookup("missing")
    with pytest.raises(ValueError):
        MaxPerformanceTable({"x": 1.5})
