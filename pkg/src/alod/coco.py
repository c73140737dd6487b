"""COCO-style annotation documents and the dataset manifest on disk.

Layout written by the generator:
    <root>/manifest.json
    <root>/<split>/images/%06d.png
    <root>/<split>/annotations.json      (images / annotations / categories)

Boxes are stored as [x, y, width, height]; category ids are positional
indices into the ordered category list.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping, Sequence

from alod.types import Annotation, BoundingBox, DatasetManifest, ImageRecord


def split_to_coco(records: Sequence[ImageRecord], categories: Sequence[str]) -> dict:
    """Build one COCO-layout document for a list of image records."""
    images = [
        {
            "id": rec.image_id,
            "file_name": rec.file_path,
            "width": rec.width,
            "height": rec.height,
        }
        for rec in records
    ]
    annotations = []
    ann_id = 1
    for rec in records:
        for ann in rec.annotations:
            b = ann.box
            annotations.append(
                {
                    "id": ann_id,
                    "image_id": rec.image_id,
                    "category_id": ann.category_id,
                    "bbox": [b.x_min, b.y_min, b.width, b.height],
                    "area": b.area,
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    return {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": i, "name": name} for i, name in enumerate(categories)],
    }


def records_from_coco(doc: Mapping) -> tuple[tuple[ImageRecord, ...], tuple[str, ...]]:
    """Inverse of split_to_coco."""
    categories = tuple(
        c["name"] for c in sorted(doc.get("categories", []), key=lambda c: c["id"])
    )
    by_image: dict[int, list[Annotation]] = {}
    for ann in doc.get("annotations", []):
        x, y, w, h = ann["bbox"]
        by_image.setdefault(ann["image_id"], []).append(
            Annotation(box=BoundingBox(x, y, x + w, y + h), category_id=ann["category_id"])
        )
    records = tuple(
        ImageRecord(
            image_id=img["id"],
            file_path=img["file_name"],
            width=img["width"],
            height=img["height"],
            annotations=tuple(by_image.get(img["id"], ())),
        )
        for img in doc["images"]
    )
    return records, categories


def dump_json(path: Path, payload) -> None:
    """Deterministic JSON serialization (sorted keys, fixed separators)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def write_manifest(root: Path, manifest: DatasetManifest) -> Path:
    root = Path(root)
    for split, records in manifest.splits.items():
        dump_json(root / split / "annotations.json", split_to_coco(records, manifest.categories))
    dump_json(
        root / "manifest.json",
        {
            "name": manifest.name,
            "categories": list(manifest.categories),
            "splits": {split: f"{split}/annotations.json" for split in manifest.splits},
        },
    )
    return root / "manifest.json"


def load_manifest(path) -> DatasetManifest:
    """Load a manifest from manifest.json or from a dataset root directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    with open(path) as fh:
        head = json.load(fh)
    root = path.parent
    splits = {}
    categories: tuple[str, ...] | None = None
    for split, rel in head["splits"].items():
        with open(root / rel) as fh:
            doc = json.load(fh)
        records, cats = records_from_coco(doc)
        splits[split] = records
        if categories is None:
            categories = cats if cats else tuple(head["categories"])
    if categories is None:
        categories = tuple(head["categories"])
    return DatasetManifest(name=head["name"], categories=categories, splits=splits)


def resolve_dataset_path(path: str | os.PathLike) -> Path:
    """Resolve a dataset path, falling back to $ALOD_DATA_ROOT for relative paths."""
    p = Path(path)
    if p.exists():
        return p
    root = os.environ.get("ALOD_DATA_ROOT")
    if root and not p.is_absolute():
        candidate = Path(root) / p
        if candidate.exists():
            return candidate
    return p
