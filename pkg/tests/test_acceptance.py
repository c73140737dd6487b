"""Acceptance suite: every criterion runs at its stated tolerance and prints
one pass/fail line (visible with `pytest -s` or in the captured output)."""

import csv
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from alod import cli
from alod.evaluation import (
    ALCurve,
    MaxPerformanceTable,
    auc,
    build_curve,
    correlation_history,
    crossing,
    crossing_ranking,
    map50,
    report,
    spearman,
)
from alod.orchestrator import ALConfig, run_matrix
from alod.query import entropy, mutual_information, prob_margin
from alod.runlog import load_runlog
from alod.synthgen import SynthConfig, dataset_stats, generate_dataset
from alod.types import Annotation, BoundingBox, Detection, DropoutSampleSet, ImageRecord

from .conftest import random_detections
from .oracles import map50_reference, nms_reference

FIXTURE_RUNS = Path(__file__).parent / "fixtures" / "fixture_runs"

STRATEGIES = ("random", "entropy", "prob_margin", "mc_dropout", "mutual_information")
SEEDS = (0, 1, 2, 3)


@pytest.fixture
def announce(capsys):
    """One pass line per criterion, printed past pytest's capture."""

    def _announce(name: str) -> None:
        with capsys.disabled():
            print(f"ACCEPTANCE [{name}] PASS")

    return _announce


@pytest.fixture(scope="module")
def full_matrix(loop_dataset, tmp_path_factory):
    """The 5 strategies x 4 seeds x T=8 matrix, run twice for determinism."""
    root, manifest = loop_dataset
    config = ALConfig(manifest_path=str(root / "manifest.json"))
    out1 = tmp_path_factory.mktemp("matrix_run1")
    started = time.monotonic()
    results, failures = run_matrix(config, manifest, STRATEGIES, SEEDS, out1)
    elapsed = time.monotonic() - started
    assert not failures, f"matrix runs failed: {failures}"
    out2 = tmp_path_factory.mktemp("matrix_run2")
    rerun, refail = run_matrix(config, manifest, STRATEGIES, SEEDS, out2)
    assert not refail
    return {
        "results": results,
        "out1": out1,
        "out2": out2,
        "elapsed": elapsed,
    }


def test_dataset_variability_table(tmp_path, announce):
    config = SynthConfig(split_sizes={"train": 2000})
    started = time.monotonic()
    manifest = generate_dataset(config, tmp_path / "mnist_det_style")
    elapsed = time.monotonic() - started
    stats = dataset_stats(manifest, "train")
    assert elapsed < 120.0, f"generation took {elapsed:.0f}s"
    assert abs(stats.std_cx - 0.233) <= 0.05, stats
    assert abs(stats.std_cy - 0.233) <= 0.05, stats
    assert abs(stats.std_w - 0.054) <= 0.03, stats
    assert abs(stats.std_h - 0.054) <= 0.03, stats
    assert abs(stats.mean_instances - 3.0) <= 0.1, stats
    announce(
        f"dataset-variability: cx={stats.std_cx:.3f} cy={stats.std_cy:.3f} "
        f"w={stats.std_w:.3f} h={stats.std_h:.3f} inst={stats.mean_instances:.3f} "
        f"in {elapsed:.0f}s"
    )


def test_scoring_oracles(announce):
    box = BoundingBox(0, 0, 10, 10)
    for c in (2, 10, 26):
        value = entropy(Detection(box, 0.5, tuple([1.0 / c] * c)))
        assert abs(value - math.log(c)) <= 1e-9
    pm = prob_margin(Detection(box, 0.5, (0.6, 0.3, 0.1)))
    assert pm == (1 - (0.6 - 0.3)) ** 2
    assert abs(pm - 0.49) <= 1e-12

    same = Detection(box, 0.5, (0.6, 0.4))
    assert mutual_information(DropoutSampleSet.from_samples([same, same])) <= 1e-9

    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        k = int(rng.integers(2, 6))
        c = int(rng.integers(2, 6))
        rows = rng.dirichlet(np.ones(c), size=k)
        mean = rows.mean(axis=0)
        raw = float(-(mean[mean > 0] * np.log(mean[mean > 0])).sum()) - float(
            np.mean([-(r[r > 0] * np.log(r[r > 0])).sum() for r in rows])
        )
        assert raw >= -1e-9
        sample_set = DropoutSampleSet.from_samples(
            [Detection(box, 0.5, tuple(r)) for r in rows]
        )
        assert mutual_information(sample_set) >= 0.0
    announce("scoring-oracles: entropy/prob-margin/mutual-information")


def test_nms_bruteforce_equivalence(announce):
    from alod import _kernels_py, kernels
    from alod.postproc import nms

    rng = np.random.default_rng(99)
    for trial in range(1000):
        dets = random_detections(rng, int(rng.integers(0, 11)))
        thr = float(rng.uniform(0.1, 0.9))
        expected_idx = nms_reference(
            [d.box.as_tuple() for d in dets], [d.score for d in dets], thr
        )
        assert nms(dets, thr) == [dets[i] for i in expected_idx]
        boxes = np.array([d.box.as_tuple() for d in dets]).reshape(-1, 4)
        scores = np.array([d.score for d in dets])
        assert kernels.nms_keep(boxes, scores, thr).tolist() == expected_idx
        assert _kernels_py.nms_keep(boxes, scores, thr).tolist() == expected_idx
    announce("nms-bruteforce: 1000 random sets, both kernel backends")


def test_map50_bruteforce_equivalence(announce):
    rng = np.random.default_rng(314)
    checked = 0
    while checked < 1000:
        num_classes = int(rng.integers(1, 4))
        records, preds, oracle_preds, oracle_gts = [], {}, {}, {}
        total_gt = 0
        for image_id in range(int(rng.integers(1, 6))):
            gts = []
            for _ in range(int(rng.integers(0, 4))):
                x0, y0 = rng.uniform(0, 60, 2)
                w, h = rng.uniform(5, 30, 2)
                gts.append(Annotation(BoundingBox(x0, y0, x0 + w, y0 + h), int(rng.integers(num_classes))))
            total_gt += len(gts)
            records.append(ImageRecord(image_id, f"{image_id}.png", 100, 100, tuple(gts)))
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
                probs = [0.0] * num_classes
                probs[cls] = 1.0
                dets.append(Detection(BoundingBox(*b), float(rng.uniform(0, 1)), tuple(probs)))
            preds[image_id] = dets
            oracle_preds[image_id] = [(d.box.as_tuple(), d.score, d.argmax_class) for d in dets]
            oracle_gts[image_id] = [(g.box.as_tuple(), g.category_id) for g in gts]
        if total_gt == 0:
            continue
        got = map50(preds, records, num_classes)
        expected = map50_reference(oracle_preds, oracle_gts, num_classes)
        assert abs(got - expected) <= 1e-9
        checked += 1

    gt_box = BoundingBox(10, 10, 40, 40)
    perfect_records = [ImageRecord(0, "0.png", 64, 64, (Annotation(gt_box, 0),))]
    perfect_preds = {0: [Detection(gt_box, 1.0, (1.0,))]}
    assert map50(perfect_preds, perfect_records, 1) == 1.0
    announce("map50-bruteforce: 1000 random instances + perfect fixture")


def test_analytic_fixtures(announce):
    triangle = ALCurve("images", (0.0, 10.0), (0.0, 1.0), (0.0, 0.0), 1)
    assert abs(auc(triangle) - 5.0) <= 1e-12
    ramp = ALCurve("images", (100.0, 200.0), (0.5, 0.9), (0.0, 0.0), 1)
    assert abs(crossing(ramp, 0.7) - 150.0) <= 1e-12
    rho = spearman([1, 2, 3, 4, 5], [2, 1, 3, 4, 5])
    assert abs(rho - 0.9) <= 1e-12
    announce("analytic-fixtures: auc=5.0 crossing=150 spearman=0.9")


def test_closed_loop_determinism(full_matrix, announce):
    elapsed = full_matrix["elapsed"]
    assert elapsed < 300.0, f"matrix took {elapsed:.0f}s"
    for strategy in STRATEGIES:
        for seed in SEEDS:
            a = (full_matrix["out1"] / strategy / f"seed_{seed}" / "runlog.json").read_bytes()
            b = (full_matrix["out2"] / strategy / f"seed_{seed}" / "runlog.json").read_bytes()
            assert a == b, f"rerun of {strategy}/seed {seed} differs"
    log = full_matrix["results"][("entropy", 0)]
    assert len(log.steps) == 9
    assert log.steps[-1].labeled_images == 100 + 8 * 100
    announce(f"closed-loop-determinism: 20 runs byte-identical, {elapsed:.0f}s")


def test_simulator_calibration_contract(full_matrix, announce):
    results = full_matrix["results"]
    curves = {
        s: build_curve([results[(s, seed)] for seed in SEEDS], "images")
        for s in ("entropy", "random")
    }
    entropy_auc = auc(curves["entropy"])
    random_auc = auc(curves["random"])
    assert entropy_auc > random_auc, (entropy_auc, random_auc)
    announce(f"simulator-calibration: entropy AUC {entropy_auc:.1f} > random AUC {random_auc:.1f}")


def test_evaluation_protocol_fixture(tmp_path, announce):
    collections = {}
    for run_dir in sorted(FIXTURE_RUNS.glob("*/seed_*")):
        log = load_runlog(run_dir)
        collections.setdefault(log.strategy, []).append(log)
    table = MaxPerformanceTable({"fixture-ds": 1.0})
    out = report({"fixture-ds": collections}, table, tmp_path / "report")

    expected = {
        ("fast", "images"): 400.0,
        ("slow", "images"): 500.0,
        ("fast", "instances"): 1200.0,
        ("slow", "instances"): 1500.0,
    }
    for axis, filename in (("images", "crossings_images.csv"), ("instances", "crossings_boxes.csv")):
        with open(out / filename, newline="") as fh:
            rows = {row["strategy"]: row for row in csv.DictReader(fh)}
        for strategy in ("fast", "slow"):
            curve = build_curve(collections[strategy], axis)
            value = crossing(curve, 0.9)
            assert value == expected[(strategy, axis)]
            assert float(rows[strategy]["fixture-ds"]) == value

    reference = crossing_ranking(collections, level=0.9)
    for metric in ("map50", "auc"):
        history = correlation_history(collections, reference, metric=metric)
        assert all(abs(r - 1.0) <= 1e-12 for r in history.rhos)
    announce("evaluation-protocol-fixture: crossings exact, correlation history == 1")


def test_protocol_self_conformance(tmp_path, capsys, announce):
    code = cli.main(["protocol-check", "--workdir", str(tmp_path / "pc"), "--k", "3"])
    captured = capsys.readouterr()
    assert code == 0, captured.err
    assert "PASS" in captured.out
    announce("protocol-self-conformance: alod protocol-check vs built-in simulator")
