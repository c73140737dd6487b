"""Request handling: convert the labeled document, invoke the trainer entry
point, export predictions for the pool and test lists."""

from __future__ import annotations

import importlib
import json
import traceback
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from alod_adapter import wire


@dataclass(frozen=True)
class AdapterConfig:
    trainer: str = "alod_adapter.stub:build"  # module:attr entry point
    epochs: int = 1
    checkpoint_dir: str = "checkpoints"
    device: str = "cpu"
    k: int = 10

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2 so dropout strategies can be served")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AdapterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown adapter config keys: {sorted(unknown)}")
        return cls(**doc)


def load_trainer(entry_point: str):
    module_name, _, attr = entry_point.partition(":")
    if not attr:
        raise ValueError(f"trainer entry point {entry_point!r} must be 'module:attr'")
    module = importlib.import_module(module_name)
    return getattr(module, attr)


def serve_request(request_dir: str | Path, config: AdapterConfig) -> None:
    """Answer one request; on failure the response still completes with
    ok=false so the orchestrator never waits on a half-written marker."""
    request_dir = Path(request_dir)
    try:
        request = wire.read_request(request_dir)
        labeled = request["labeled"]
        if not labeled.get("images"):
            raise ValueError("empty labeled set: nothing to train on")
        k = int(request["k"])
        trainer = load_trainer(config.trainer)
        predictor = trainer(labeled, config)

        images = request["images"]
        payload: dict[int, list] = {}
        for image_id in (*request["pool_image_ids"], *request["test_image_ids"]):
            entry = dict(images[str(image_id)])
            entry["id"] = image_id
            payload[image_id] = predictor.predict(entry, k)
        checkpoint = getattr(predictor, "checkpoint", None)
        wire.write_response(request_dir, payload, ok=True, checkpoint=checkpoint)
    except Exception as err:
        summary = traceback.format_exc(limit=3)
        wire.write_response(
            request_dir, None, ok=False, message=f"{type(err).__name__}: {err}\n{summary}"
        )
        raise


def load_config(path: str | None) -> AdapterConfig:
    if not path:
        return AdapterConfig()
    with open(path) as fh:
        return AdapterConfig.from_dict(json.load(fh))
