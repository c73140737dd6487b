"""Directory-based wire protocol between the orchestrator and detector backends.

Per step the orchestrator writes <dir>/request.json and invokes the backend
as `<cmd> --request <dir>`. The backend writes predictions.json and
status.json, then creates response.ready strictly last. Detections carry
corner-form boxes, an objectness score, a class-probability vector and,
when k >= 2 was requested, k aligned dropout samples whose arithmetic mean
equals the reported detection.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from alod.types import BoundingBox, Detection, DropoutSampleSet

PROTOCOL_VERSION = 1
REQUEST_NAME = "request.json"
PREDICTIONS_NAME = "predictions.json"
STATUS_NAME = "status.json"
READY_NAME = "response.ready"

PROB_SUM_TOL = 1e-6
SAMPLE_MEAN_TOL = 1e-9


class ProtocolError(RuntimeError):
    """Response or request violates the wire protocol."""


class BackendError(RuntimeError):
    """The backend failed: bad exit, error status or timeout."""


REQUEST_SCHEMA = {
    "type": "object",
    "required": [
        "protocol_version",
        "phase",
        "step",
        "run_seed",
        "k",
        "labeled",
        "pool_image_ids",
        "test_image_ids",
        "images",
    ],
    "properties": {
        "protocol_version": {"type": "integer"},
        "phase": {"type": "string"},
        "step": {"type": "integer", "minimum": 0},
        "run_seed": {"type": "integer", "minimum": 0},
        "k": {"type": "integer", "minimum": 1},
        "checkpoint": {"type": ["string", "null"]},
        "manifest_path": {"type": ["string", "null"]},
        "labeled": {"type": "object"},
        "pool_image_ids": {"type": "array", "items": {"type": "integer"}},
        "test_image_ids": {"type": "array", "items": {"type": "integer"}},
        "images": {"type": "object"},
    },
}

_DETECTION_SCHEMA = {
    "type": "object",
    "required": ["bbox", "score", "probs"],
    "properties": {
        "bbox": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 4,
            "maxItems": 4,
        },
        "score": {"type": "number", "minimum": 0, "maximum": 1},
        "probs": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "samples": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"}, "minItems": 6},
            "minItems": 1,
        },
    },
}

PREDICTIONS_SCHEMA = {
    "type": "object",
    "additionalProperties": {"type": "array", "items": _DETECTION_SCHEMA},
}

STATUS_SCHEMA = {
    "type": "object",
    "required": ["ok"],
    "properties": {
        "ok": {"type": "boolean"},
        "message": {"type": "string"},
        "checkpoint": {"type": ["string", "null"]},
    },
}


def validate_schema(payload, schema, what: str) -> None:
    import jsonschema

    try:
        jsonschema.validate(payload, schema)
    except jsonschema.ValidationError as err:
        raise ProtocolError(f"{what} violates the protocol schema: {err.message}") from err


# ---------------------------------------------------------------------------
# request side


def write_request(step_dir: str | os.PathLike, request: Mapping) -> Path:
    step_dir = Path(step_dir)
    step_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(request)
    payload.setdefault("protocol_version", PROTOCOL_VERSION)
    validate_schema(payload, REQUEST_SCHEMA, "request")
    path = step_dir / REQUEST_NAME
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
    return path


def read_request(step_dir: str | os.PathLike) -> dict:
    path = Path(step_dir) / REQUEST_NAME
    if not path.exists():
        raise ProtocolError(f"no {REQUEST_NAME} in {step_dir}")
    with open(path) as fh:
        request = json.load(fh)
    validate_schema(request, REQUEST_SCHEMA, "request")
    if request["protocol_version"] != PROTOCOL_VERSION:
        raise ProtocolError(
            f"protocol version mismatch: got {request['protocol_version']}, "
            f"supported {PROTOCOL_VERSION}"
        )
    return request


# ---------------------------------------------------------------------------
# prediction payloads


@dataclass(frozen=True)
class ImagePredictions:
    """Array view of one image's detections.

    boxes (n, 4), scores (n,), probs (n, c); samples is (n, k, 5 + c) or None
    when the backend ran a single forward pass.
    """

    boxes: np.ndarray
    scores: np.ndarray
    probs: np.ndarray
    samples: np.ndarray | None = None

    def __len__(self) -> int:
        return self.boxes.shape[0]

    @property
    def class_ids(self) -> np.ndarray:
        if self.probs.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return self.probs.argmax(axis=1)

    def select(self, indices: np.ndarray) -> "ImagePredictions":
        return ImagePredictions(
            boxes=self.boxes[indices],
            scores=self.scores[indices],
            probs=self.probs[indices],
            samples=None if self.samples is None else self.samples[indices],
        )

    def to_sample_sets(self) -> list[DropoutSampleSet]:
        """Materialize per-detection value objects (small inputs only)."""
        out = []
        for i in range(len(self)):
            mean = Detection(
                box=BoundingBox(*self.boxes[i].tolist()),
                score=float(self.scores[i]),
                class_probs=tuple(self.probs[i].tolist()),
            )
            if self.samples is None:
                out.append(DropoutSampleSet(mean=mean, samples=(mean,)))
            else:
                dets = tuple(
                    Detection(
                        box=BoundingBox(*row[:4].tolist()),
                        score=float(row[4]),
                        class_probs=tuple(row[5:].tolist()),
                    )
                    for row in self.samples[i]
                )
                out.append(DropoutSampleSet(mean=mean, samples=dets))
        return out


def _fix_prob_sum(probs: np.ndarray) -> np.ndarray:
    """Nudge the largest component so each row sums to 1 exactly."""
    probs = probs.copy()
    for row in probs:
        row[row.argmax()] += 1.0 - math.fsum(row.tolist())
    return probs


def pack_detections(
    boxes: np.ndarray,
    scores: np.ndarray,
    probs: np.ndarray,
    samples: np.ndarray | None = None,
    box_decimals: int = 3,
    prob_decimals: int = 6,
) -> list[dict]:
    """Serialize detections, rounding to keep payloads small.

    Sample rows are rounded first and the reported detection recomputed as
    their exact float mean, preserving the mean-of-samples contract.
    """
    n = len(scores)
    if n == 0:
        return []
    if samples is not None:
        samples = samples.astype(np.float64).copy()
        samples[:, :, :4] = np.round(samples[:, :, :4], box_decimals)
        samples[:, :, 4] = np.clip(np.round(samples[:, :, 4], prob_decimals), 0.0, 1.0)
        samples[:, :, 5:] = np.round(samples[:, :, 5:], prob_decimals)
        for i in range(n):
            samples[i, :, 5:] = _fix_prob_sum(samples[i, :, 5:])
        means = samples.mean(axis=1)
        boxes, scores, probs = means[:, :4], means[:, 4], means[:, 5:]
    else:
        boxes = np.round(np.asarray(boxes, dtype=np.float64), box_decimals)
        scores = np.clip(np.round(np.asarray(scores, dtype=np.float64), prob_decimals), 0.0, 1.0)
        probs = _fix_prob_sum(np.round(np.asarray(probs, dtype=np.float64), prob_decimals))
    out = []
    for i in range(n):
        det = {
            "bbox": boxes[i].tolist(),
            "score": float(scores[i]),
            "probs": probs[i].tolist(),
        }
        if samples is not None:
            det["samples"] = samples[i].tolist()
        out.append(det)
    return out


def write_response(
    step_dir: str | os.PathLike,
    predictions: Mapping[int, list[dict]] | None,
    ok: bool = True,
    message: str | None = None,
    checkpoint: str | None = None,
) -> None:
    """Write the response files; response.ready is created strictly last."""
    step_dir = Path(step_dir)
    step_dir.mkdir(parents=True, exist_ok=True)
    with open(step_dir / PREDICTIONS_NAME, "w") as fh:
        json.dump(
            {str(k): v for k, v in (predictions or {}).items()},
            fh,
            separators=(",", ":"),
        )
    status: dict = {"ok": ok, "protocol_version": PROTOCOL_VERSION}
    if message:
        status["message"] = message
    if checkpoint is not None:
        status["checkpoint"] = checkpoint
    with open(step_dir / STATUS_NAME, "w") as fh:
        json.dump(status, fh, separators=(",", ":"))
    (step_dir / READY_NAME).touch()


def wait_for_ready(step_dir: str | os.PathLike, timeout: float = 10.0) -> None:
    step_dir = Path(step_dir)
    deadline = time.monotonic() + timeout
    while not (step_dir / READY_NAME).exists():
        if time.monotonic() > deadline:
            raise BackendError(f"backend produced no {READY_NAME} in {step_dir}")
        time.sleep(0.02)


def read_status(step_dir: str | os.PathLike) -> dict:
    path = Path(step_dir) / STATUS_NAME
    if not path.exists():
        raise ProtocolError(f"no {STATUS_NAME} in {step_dir}")
    with open(path) as fh:
        status = json.load(fh)
    validate_schema(status, STATUS_SCHEMA, "status")
    return status


def _parse_image(entry: list, num_classes: int, image_id: int) -> ImagePredictions:
    n = len(entry)
    boxes = np.zeros((n, 4), dtype=np.float64)
    scores = np.zeros(n, dtype=np.float64)
    probs = np.zeros((n, num_classes), dtype=np.float64)
    sample_rows = []
    has_samples = n > 0 and "samples" in entry[0]
    for i, det in enumerate(entry):
        boxes[i] = det["bbox"]
        scores[i] = det["score"]
        p = det["probs"]
        if len(p) != num_classes:
            raise ProtocolError(
                f"image {image_id}: probs length {len(p)} != {num_classes} classes"
            )
        probs[i] = p
        if has_samples != ("samples" in det):
            raise ProtocolError(f"image {image_id}: inconsistent sample presence")
        if has_samples:
            sample_rows.append(det["samples"])
    samples = None
    if has_samples:
        samples = np.asarray(sample_rows, dtype=np.float64)
        if samples.ndim != 3 or samples.shape[2] != 5 + num_classes:
            raise ProtocolError(
                f"image {image_id}: samples must be (k, {5 + num_classes}) rows"
            )
        drift = np.abs(samples.mean(axis=1)[:, :4] - boxes).max(initial=0.0)
        drift = max(
            drift,
            np.abs(samples.mean(axis=1)[:, 4] - scores).max(initial=0.0),
            np.abs(samples.mean(axis=1)[:, 5:] - probs).max(initial=0.0),
        )
        if drift > SAMPLE_MEAN_TOL:
            raise ProtocolError(
                f"image {image_id}: detection deviates from its sample mean by {drift}"
            )
    sums = probs.sum(axis=1) if n else np.zeros(0)
    if n and np.abs(sums - 1.0).max() > PROB_SUM_TOL:
        raise ProtocolError(f"image {image_id}: class probabilities do not sum to 1")
    if n:
        probs /= sums[:, None]
    return ImagePredictions(boxes=boxes, scores=scores, probs=probs, samples=samples)


def read_response(
    step_dir: str | os.PathLike,
    expected_ids: Sequence[int],
    num_classes: int,
    require_samples_for: Sequence[int] = (),
    k: int = 1,
) -> tuple[dict[int, ImagePredictions], dict]:
    """Parse and validate a backend response; returns (predictions, status)."""
    step_dir = Path(step_dir)
    status = read_status(step_dir)
    if not status.get("ok", False):
        raise BackendError(f"backend reported failure: {status.get('message', 'no message')}")
    path = step_dir / PREDICTIONS_NAME
    if not path.exists():
        raise ProtocolError(f"no {PREDICTIONS_NAME} in {step_dir}")
    with open(path) as fh:
        raw = json.load(fh)
    predictions: dict[int, ImagePredictions] = {}
    for key, entry in raw.items():
        predictions[int(key)] = _parse_image(entry, num_classes, int(key))
    missing = [i for i in expected_ids if i not in predictions]
    if missing:
        raise ProtocolError(f"response misses predictions for image ids {missing[:5]}")
    for image_id in require_samples_for:
        pred = predictions[image_id]
        if len(pred) and (pred.samples is None or pred.samples.shape[1] != k):
            raise ProtocolError(
                f"image {image_id}: expected {k} aligned dropout samples per detection"
            )
    return predictions, status


def invoke_backend(
    backend_cmd: Sequence[str],
    step_dir: str | os.PathLike,
    timeout: float = 600.0,
) -> None:
    """Run the backend subprocess for one request directory."""
    cmd = list(backend_cmd) + ["--request", str(step_dir)]
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired as err:
        raise BackendError(f"backend timed out after {timeout}s: {' '.join(cmd)}") from err
    if proc.returncode != 0:
        raise BackendError(
            f"backend exited with {proc.returncode}: {' '.join(cmd)}\n{proc.stderr[-2000:]}"
        )
    wait_for_ready(step_dir)
