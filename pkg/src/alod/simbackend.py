"""Statistical stand-in for a deep detector.

Maps labeled-set composition to per-class competence and emits noisy
detections (with aligned dropout samples) for pool and test images. The
class-probability model couples low competence to high entropy, which is
what makes uncertainty queries informative inside the closed loop; outcomes
are properties of this simulator, not deep-learning measurements.

All randomness derives from (salt, run seed, image id, step), so outputs are
independent of scheduling and prediction order.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import traceback
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from alod import coco, protocol
from alod.types import ImageRecord


@dataclass(frozen=True)
class SimConfig:
    """Simulator knobs; learning speed is instances-per-class based."""

    tau: float = 100.0  # instances of a class for kappa = 1 - 1/e
    miss_floor: float = 0.05
    loc_noise: float = 0.12  # box jitter, fraction of box size
    class_concentration: float = 15.0
    fp_rate: float = 0.5
    dropout_jitter: float = 0.35
    salt: int = 1337

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        for name in ("miss_floor", "loc_noise", "fp_rate", "dropout_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown simulator config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass(frozen=True)
class Competence:
    """Per-class skill in [0, 1), saturating with labeled instance count."""

    kappas: tuple[float, ...]

    def __post_init__(self):
        for k in self.kappas:
            if not 0.0 <= k <= 1.0:
                raise ValueError(f"kappa {k} outside [0, 1]")

    @property
    def mean(self) -> float:
        return sum(self.kappas) / len(self.kappas)


def fit(category_counts: Sequence[float], config: SimConfig) -> Competence:
    """Closed-form competence: kappa_c = 1 - exp(-n_c / tau)."""
    return Competence(
        kappas=tuple(1.0 - math.exp(-float(n) / config.tau) for n in category_counts)
    )


def counts_from_coco(labeled_doc: Mapping, num_classes: int) -> np.ndarray:
    counts = np.zeros(num_classes, dtype=np.float64)
    for ann in labeled_doc.get("annotations", []):
        counts[ann["category_id"]] += 1
    return counts


def image_rng(config: SimConfig, run_seed: int, image_id: int, step: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((config.salt, run_seed, image_id, step))
    )


def _clip_boxes(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    boxes[..., 0] = np.clip(boxes[..., 0], 0.0, width - 0.5)
    boxes[..., 1] = np.clip(boxes[..., 1], 0.0, height - 0.5)
    boxes[..., 2] = np.clip(boxes[..., 2], boxes[..., 0] + 0.25, width)
    boxes[..., 3] = np.clip(boxes[..., 3], boxes[..., 1] + 0.25, height)
    return boxes


def predict(
    record: ImageRecord,
    competence: Competence,
    config: SimConfig,
    k: int,
    rng: np.random.Generator,
) -> protocol.ImagePredictions:
    """Simulated detections for one image.

    Ground-truth boxes are detected with probability (0.1 + 0.9 kappa) *
    (1 - miss floor), jittered with noise shrinking in kappa; class
    probabilities concentrate on the true class as kappa grows. False
    positives arrive at a Poisson rate fading with mean competence.
    """
    num_classes = len(competence.kappas)
    width, height = float(record.width), float(record.height)
    rows: list[np.ndarray] = []  # each (k, 5 + C)
    for ann in record.annotations:
        kappa = competence.kappas[ann.category_id]
        p_det = (0.1 + 0.9 * kappa) * (1.0 - config.miss_floor)
        if rng.random() >= p_det:
            continue
        box = np.array(ann.box.as_tuple())
        size = max(ann.box.width, ann.box.height)
        anchor = box + rng.normal(0.0, config.loc_noise * (1.0 - kappa) * size, 4)
        sample_boxes = anchor + rng.normal(
            0.0, config.dropout_jitter * (1.0 - kappa) * size, (k, 4)
        )
        _clip_boxes(sample_boxes, width, height)
        alpha = np.ones(num_classes)
        alpha[ann.category_id] += config.class_concentration * kappa
        sample_probs = rng.dirichlet(alpha, size=k)
        sample_scores = sample_probs.max(axis=1) * (0.5 + 0.5 * kappa)
        rows.append(
            np.concatenate([sample_boxes, sample_scores[:, None], sample_probs], axis=1)
        )
    n_fp = int(rng.poisson(config.fp_rate * (1.0 - competence.mean)))
    for _ in range(n_fp):
        w = rng.uniform(0.05, 0.25) * min(width, height)
        h = rng.uniform(0.05, 0.25) * min(width, height)
        x0 = rng.uniform(0.0, width - w)
        y0 = rng.uniform(0.0, height - h)
        anchor = np.array([x0, y0, x0 + w, y0 + h])
        size = max(w, h)
        sample_boxes = anchor + rng.normal(
            0.0, config.dropout_jitter * (1.0 - competence.mean) * size, (k, 4)
        )
        _clip_boxes(sample_boxes, width, height)
        sample_probs = rng.dirichlet(np.ones(num_classes), size=k)
        sample_scores = rng.uniform(0.1, 0.6, size=k)
        rows.append(
            np.concatenate([sample_boxes, sample_scores[:, None], sample_probs], axis=1)
        )
    if not rows:
        empty = np.zeros((0, 4))
        return protocol.ImagePredictions(
            boxes=empty, scores=np.zeros(0), probs=np.zeros((0, num_classes)), samples=None
        )
    stack = np.stack(rows)  # (n, k, 5 + C)
    means = stack.mean(axis=1)
    return protocol.ImagePredictions(
        boxes=means[:, :4],
        scores=np.clip(means[:, 4], 0.0, 1.0),
        probs=means[:, 5:],
        samples=stack if k >= 2 else None,
    )


def serve_request(step_dir: str | Path, config: SimConfig) -> None:
    """Answer one wire-protocol request directory."""
    request = protocol.read_request(step_dir)
    manifest_path = request.get("manifest_path")
    if not manifest_path:
        raise protocol.ProtocolError("simulator backend needs manifest_path in the request")
    manifest = coco.load_manifest(manifest_path)
    by_id = manifest.records_by_id()
    num_classes = manifest.num_classes
    competence = fit(counts_from_coco(request["labeled"], num_classes), config)
    k = int(request["k"])
    run_seed = int(request["run_seed"])
    step = int(request["step"])

    payload: dict[int, list[dict]] = {}
    for image_id in request["pool_image_ids"]:
        record = by_id[image_id]
        pred = predict(record, competence, config, k, image_rng(config, run_seed, image_id, step))
        payload[image_id] = protocol.pack_detections(
            pred.boxes, pred.scores, pred.probs, pred.samples
        )
    for image_id in request["test_image_ids"]:
        record = by_id[image_id]
        pred = predict(record, competence, config, 1, image_rng(config, run_seed, image_id, step))
        payload[image_id] = protocol.pack_detections(pred.boxes, pred.scores, pred.probs, None)
    protocol.write_response(step_dir, payload, ok=True, checkpoint=request.get("checkpoint"))


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="alod-simbackend", description=__doc__)
    parser.add_argument("--request", required=True, help="request directory")
    parser.add_argument("--config", default=None, help="simulator config JSON")
    args = parser.parse_args(argv)
    config = SimConfig()
    if args.config:
        with open(args.config) as fh:
            config = SimConfig.from_dict(json.load(fh))
    try:
        serve_request(args.request, config)
    except Exception as err:  # report through the protocol, then fail loudly
        protocol.write_response(
            Path(args.request),
            None,
            ok=False,
            message=f"{type(err).__name__}: {err}",
        )
        traceback.print_exc()
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
