"""Protocol conformance check: run a golden request through any backend and
validate the response against the wire-protocol schema and semantics."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from alod import coco, protocol
from alod.synthgen import SynthConfig, generate_dataset

def build_golden_request(workdir: Path, k: int = 3) -> tuple[Path, dict]:
    """A tiny self-contained dataset plus one representative request."""
    data_root = workdir / "golden_data"
    if not (data_root / "manifest.json").exists():
        config = SynthConfig(
            source="digits",
            image_size=(64, 64),
            split_sizes={"train": 4, "test": 2},
            seed=7,
        )
        generate_dataset(config, data_root)
    manifest = coco.load_manifest(data_root)
    by_id = manifest.records_by_id()
    train_ids = sorted(manifest.split_ids("train"))
    test_ids = sorted(manifest.split_ids("test"))
    labeled, pool = train_ids[:2], train_ids[2:]
    request = {
        "phase": "train_predict",
        "step": 0,
        "run_seed": 0,
        "k": k,
        "checkpoint": None,
        "manifest_path": str((data_root / "manifest.json").resolve()),
        "labeled": coco.split_to_coco([by_id[i] for i in labeled], manifest.categories),
        "pool_image_ids": pool,
        "test_image_ids": test_ids,
        "images": {
            str(i): {
                "file_name": by_id[i].file_path,
                "width": by_id[i].width,
                "height": by_id[i].height,
            }
            for i in (*pool, *test_ids)
        },
    }
    step_dir = workdir / "golden_request"
    protocol.write_request(step_dir, request)
    return step_dir, request


def check_backend(
    backend_cmd: Sequence[str], workdir: str | Path, k: int = 3, timeout: float = 300.0
) -> list[str]:
    """Run the golden request; returns a list of conformance problems."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    step_dir, request = build_golden_request(workdir, k=k)
    problems: list[str] = []
    try:
        protocol.invoke_backend(backend_cmd, step_dir, timeout=timeout)
    except protocol.BackendError as err:
        return [f"backend invocation failed: {err}"]

    for name in (protocol.PREDICTIONS_NAME, protocol.STATUS_NAME, protocol.READY_NAME):
        if not (step_dir / name).exists():
            problems.append(f"missing response file {name}")
    if problems:
        return problems

    with open(step_dir / protocol.STATUS_NAME) as fh:
        status = json.load(fh)
    try:
        protocol.validate_schema(status, protocol.STATUS_SCHEMA, "status")
    except protocol.ProtocolError as err:
        problems.append(str(err))
    with open(step_dir / protocol.PREDICTIONS_NAME) as fh:
        raw = json.load(fh)
    try:
        protocol.validate_schema(raw, protocol.PREDICTIONS_SCHEMA, "predictions")
    except protocol.ProtocolError as err:
        problems.append(str(err))
    if problems:
        return problems

    num_classes = len(request["labeled"]["categories"])
    expected = [*request["pool_image_ids"], *request["test_image_ids"]]
    try:
        predictions, _ = protocol.read_response(
            step_dir,
            expected_ids=expected,
            num_classes=num_classes,
            require_samples_for=request["pool_image_ids"] if k >= 2 else (),
            k=k,
        )
    except (protocol.ProtocolError, protocol.BackendError) as err:
        return [str(err)]
    for image_id, pred in predictions.items():
        if len(pred) and not (pred.scores.min() >= 0.0 and pred.scores.max() <= 1.0):
            problems.append(f"image {image_id}: scores outside [0, 1]")
    return problems
