"""Consumer side of the directory-based wire protocol.

A request directory holds request.json; the adapter answers with
predictions.json and status.json and creates response.ready strictly after
both payload files are complete.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

PROTOCOL_VERSION = 1
REQUEST_NAME = "request.json"
PREDICTIONS_NAME = "predictions.json"
STATUS_NAME = "status.json"
READY_NAME = "response.ready"

_REQUIRED_FIELDS = (
    "protocol_version",
    "phase",
    "step",
    "run_seed",
    "k",
    "labeled",
    "pool_image_ids",
    "test_image_ids",
    "images",
)


class WireError(RuntimeError):
    """The request violates the protocol this adapter speaks."""


def read_request(request_dir: str | Path) -> dict:
    path = Path(request_dir) / REQUEST_NAME
    if not path.exists():
        raise WireError(f"no {REQUEST_NAME} in {request_dir}")
    with open(path) as fh:
        request = json.load(fh)
    missing = [f for f in _REQUIRED_FIELDS if f not in request]
    if missing:
        raise WireError(f"request misses fields {missing}")
    if request["protocol_version"] != PROTOCOL_VERSION:
        raise WireError(
            f"unsupported protocol version {request['protocol_version']}, "
            f"this adapter speaks {PROTOCOL_VERSION}"
        )
    return request


def write_response(
    request_dir: str | Path,
    predictions: Mapping[int, list] | None,
    ok: bool,
    message: str | None = None,
    checkpoint: str | None = None,
) -> None:
    """Write payload files first, the ready marker strictly last."""
    request_dir = Path(request_dir)
    with open(request_dir / PREDICTIONS_NAME, "w") as fh:
        json.dump({str(k): v for k, v in (predictions or {}).items()}, fh)
    status: dict = {"ok": ok, "protocol_version": PROTOCOL_VERSION}
    if message:
        status["message"] = message
    if checkpoint is not None:
        status["checkpoint"] = checkpoint
    with open(request_dir / STATUS_NAME, "w") as fh:
        json.dump(status, fh)
    (request_dir / READY_NAME).touch()
