"""Shared value types: boxes, detections, annotations, datasets and pool state.

Everything here is an immutable value object; the orchestrator replaces pool
states instead of mutating them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

PROB_SUM_TOL = 1e-6
SAMPLE_MEAN_TOL = 1e-9


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in corner form (x_min, y_min, x_max, y_max), pixels."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValueError(f"box coordinate {name}={value!r} is not finite")
        if not self.x_min < self.x_max:
            raise ValueError(f"empty box: x_min={self.x_min} >= x_max={self.x_max}")
        if not self.y_min < self.y_max:
            raise ValueError(f"empty box: y_min={self.y_min} >= y_max={self.y_max}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def _normalize_probs(probs: Sequence[float]) -> tuple[float, ...]:
    """Validate a class-probability vector and renormalize small float drift.

    Vectors whose sum deviates from 1 by more than PROB_SUM_TOL are rejected;
    external backends emit floats, so exact sums cannot be required.
    """
    values = tuple(float(p) for p in probs)
    if not values:
        raise ValueError("class_probs must be nonempty")
    for p in values:
        if not math.isfinite(p) or p < 0.0:
            raise ValueError(f"class probability {p!r} out of range")
    total = math.fsum(values)
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ValueError(f"class probabilities sum to {total}, expected 1 within {PROB_SUM_TOL}")
    if total != 1.0:
        values = tuple(p / total for p in values)
    return values


@dataclass(frozen=True)
class Detection:
    """One predicted box with objectness score and class probabilities."""

    box: BoundingBox
    score: float
    class_probs: tuple[float, ...]

    def __post_init__(self):
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"objectness score {self.score!r} outside [0, 1]")
        object.__setattr__(self, "class_probs", _normalize_probs(self.class_probs))

    @property
    def num_classes(self) -> int:
        return len(self.class_probs)

    @property
    def argmax_class(self) -> int:
        return max(range(len(self.class_probs)), key=self.class_probs.__getitem__)

    def as_vector(self) -> tuple[float, ...]:
        """Feature vector (x_min, y_min, x_max, y_max, score, p_1 .. p_C)."""
        return self.box.as_tuple() + (self.score,) + self.class_probs


def mean_detection(samples: Sequence[Detection]) -> Detection:
    """Component-wise arithmetic mean of aligned detections."""
    if not samples:
        raise ValueError("cannot average zero samples")
    c = samples[0].num_classes
    if any(s.num_classes != c for s in samples):
        raise ValueError("samples have mismatching class counts")
    k = len(samples)
    vectors = [s.as_vector() for s in samples]
    mean = [math.fsum(v[i] for v in vectors) / k for i in range(5 + c)]
    return Detection(
        box=BoundingBox(mean[0], mean[1], mean[2], mean[3]),
        score=mean[4],
        class_probs=tuple(mean[5:]),
    )


@dataclass(frozen=True)
class DropoutSampleSet:
    """K stochastic forward passes for one anchor plus their mean prediction."""

    mean: Detection
    samples: tuple[Detection, ...]

    def __post_init__(self):
        if not self.samples:
            raise ValueError("sample set needs at least one sample")
        object.__setattr__(self, "samples", tuple(self.samples))
        c = self.mean.num_classes
        if any(s.num_classes != c for s in self.samples):
            raise ValueError("samples are not aligned to the mean's class count")
        expected = mean_detection(self.samples).as_vector()
        got = self.mean.as_vector()
        drift = max(abs(a - b) for a, b in zip(expected, got))
        if drift > SAMPLE_MEAN_TOL:
            raise ValueError(f"mean deviates from arithmetic sample mean by {drift}")

    @classmethod
    def from_samples(cls, samples: Sequence[Detection]) -> "DropoutSampleSet":
        return cls(mean=mean_detection(samples), samples=tuple(samples))

    @property
    def k(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class Annotation:
    """Ground-truth box with a positional category index."""

    box: BoundingBox
    category_id: int

    def __post_init__(self):
        if self.category_id < 0:
            raise ValueError(f"category_id {self.category_id} must be >= 0")


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_path: str
    width: int
    height: int
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.image_id}: nonpositive size {self.width}x{self.height}")
        object.__setattr__(self, "annotations", tuple(self.annotations))
        for ann in self.annotations:
            b = ann.box
            if b.x_min < 0 or b.y_min < 0 or b.x_max > self.width or b.y_max > self.height:
                raise ValueError(
                    f"image {self.image_id}: annotation box {b.as_tuple()} "
                    f"outside image bounds {self.width}x{self.height}"
                )


@dataclass(frozen=True)
class DatasetManifest:
    """Named dataset with an ordered category list and named splits."""

    name: str
    categories: tuple[str, ...]
    splits: Mapping[str, tuple[ImageRecord, ...]]

    def __post_init__(self):
        object.__setattr__(
            self, "splits", {k: tuple(v) for k, v in self.splits.items()}
        )
        c = len(self.categories)
        seen: set[int] = set()
        for split, records in self.splits.items():
            for rec in records:
                if rec.image_id in seen:
                    raise ValueError(f"duplicate image_id {rec.image_id} (split {split!r})")
                seen.add(rec.image_id)
                for ann in rec.annotations:
                    if ann.category_id >= c:
                        raise ValueError(
                            f"image {rec.image_id}: category_id {ann.category_id} "
                            f"out of range for {c} categories"
                        )

    @property
    def num_classes(self) -> int:
        return len(self.categories)

    def split(self, name: str) -> tuple[ImageRecord, ...]:
        try:
            return self.splits[name]
        except KeyError:
            raise KeyError(f"manifest {self.name!r} has no split {name!r}") from None

    def split_ids(self, name: str) -> tuple[int, ...]:
        return tuple(rec.image_id for rec in self.split(name))

    def records_by_id(self) -> dict[int, ImageRecord]:
        return {rec.image_id: rec for split in self.splits.values() for rec in split}


def count_instances(manifest: DatasetManifest, ids: Iterable[int]) -> int:
    """Total annotation count over the given image ids."""
    by_id = manifest.records_by_id()
    total = 0
    for image_id in ids:
        if image_id not in by_id:
            raise KeyError(f"image id {image_id} not in manifest {manifest.name!r}")
        total += len(by_id[image_id].annotations)
    return total


@dataclass(frozen=True)
class PoolState:
    """Labeled set, unlabeled pool and the query history that links them."""

    labeled: frozenset[int]
    unlabeled: frozenset[int]
    query_history: tuple[tuple[int, tuple[int, ...]], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "labeled", frozenset(self.labeled))
        object.__setattr__(self, "unlabeled", frozenset(self.unlabeled))
        overlap = self.labeled & self.unlabeled
        if overlap:
            raise ValueError(f"labeled and unlabeled sets overlap: {sorted(overlap)[:5]}")

    @property
    def universe(self) -> frozenset[int]:
        return self.labeled | self.unlabeled

    def apply_query(self, step: int, ids: Sequence[int]) -> "PoolState":
        """Move the queried ids from the pool into the labeled set."""
        queried = tuple(ids)
        as_set = frozenset(queried)
        if len(as_set) != len(queried):
            raise ValueError("query contains duplicate ids")
        missing = as_set - self.unlabeled
        if missing:
            raise ValueError(f"query ids not in the unlabeled pool: {sorted(missing)[:5]}")
        return PoolState(
            labeled=self.labeled | as_set,
            unlabeled=self.unlabeled - as_set,
            query_history=self.query_history + ((step, queried),),
        )
