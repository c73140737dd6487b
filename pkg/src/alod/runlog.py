"""Per-run records of the active-learning loop.

runlog.json carries only deterministic content (reruns with equal seeds are
byte-identical); wall-clock seconds live in runlog.csv, which is the
human-facing table.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace
from pathlib import Path
JSON_NAME = "runlog.json"
CSV_NAME = "runlog.csv"


@dataclass(frozen=True)
class ALStepRecord:
    """One measured point of an AL run.

    The model evaluated at step t was trained on exactly labeled_images
    images; queried_ids is the query selected afterwards (empty for the
    final step).
    """

    step: int
    labeled_images: int
    labeled_instances: int
    map50: float
    queried_ids: tuple[int, ...] = ()
    seconds: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.map50):
            raise ValueError(f"step {self.step}: map50 {self.map50!r} is not finite")
        object.__setattr__(self, "queried_ids", tuple(self.queried_ids))


@dataclass(frozen=True)
class RunLog:
    strategy: str
    seed: int
    dataset: str
    steps: tuple[ALStepRecord, ...]
    fingerprint: str

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        last_images = -1
        last_instances = -1
        for rec in self.steps:
            if rec.labeled_images < last_images or rec.labeled_instances < last_instances:
                raise ValueError("labeled counts must be non-decreasing over steps")
            last_images, last_instances = rec.labeled_images, rec.labeled_instances

    def axis_values(self, axis: str) -> list[float]:
        if axis == "images":
            return [float(r.labeled_images) for r in self.steps]
        if axis == "instances":
            return [float(r.labeled_instances) for r in self.steps]
        raise ValueError(f"unknown axis {axis!r}, expected 'images' or 'instances'")

    def map_values(self) -> list[float]:
        return [r.map50 for r in self.steps]

    def to_json_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "seed": self.seed,
            "dataset": self.dataset,
            "fingerprint": self.fingerprint,
            "steps": [
                {
                    "step": r.step,
                    "labeled_images": r.labeled_images,
                    "labeled_instances": r.labeled_instances,
                    "map50": r.map50,
                    "queried_ids": list(r.queried_ids),
                }
                for r in self.steps
            ],
        }


def save_runlog(run_dir: str | os.PathLike, log: RunLog) -> None:
    """Write runlog.json (atomically) and runlog.csv."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    tmp = run_dir / (JSON_NAME + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(log.to_json_dict(), fh, sort_keys=True, separators=(",", ":"))
    os.replace(tmp, run_dir / JSON_NAME)
    with open(run_dir / CSV_NAME, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "images_labeled", "instances_labeled", "map50", "seconds"])
        for r in log.steps:
            writer.writerow(
                [r.step, r.labeled_images, r.labeled_instances, f"{r.map50:.6f}", f"{r.seconds:.3f}"]
            )


def load_runlog(run_dir: str | os.PathLike) -> RunLog:
    """Read a persisted run, merging wall-clock seconds back from the csv."""
    run_dir = Path(run_dir)
    with open(run_dir / JSON_NAME) as fh:
        doc = json.load(fh)
    steps = [
        ALStepRecord(
            step=s["step"],
            labeled_images=s["labeled_images"],
            labeled_instances=s["labeled_instances"],
            map50=s["map50"],
            queried_ids=tuple(s["queried_ids"]),
        )
        for s in doc["steps"]
    ]
    csv_path = run_dir / CSV_NAME
    if csv_path.exists():
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        seconds = {int(row["step"]): float(row["seconds"]) for row in rows}
        steps = [replace(s, seconds=seconds.get(s.step, 0.0)) for s in steps]
    return RunLog(
        strategy=doc["strategy"],
        seed=doc["seed"],
        dataset=doc["dataset"],
        steps=tuple(steps),
        fingerprint=doc["fingerprint"],
    )
