"""Query scoring: per-prediction uncertainty, class weighting, image-level
aggregation and query selection.

All entropies use the natural logarithm. Detections reach this module only
after score thresholding and NMS; dropout-based scores read the sample sets
attached to the surviving mean predictions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from alod.types import DatasetManifest, Detection, DropoutSampleSet, mean_detection

STRATEGIES = ("random", "entropy", "prob_margin", "mc_dropout", "mutual_information")
AGGREGATIONS = ("sum", "avg", "max")
SAMPLE_STRATEGIES = frozenset({"mc_dropout", "mutual_information"})


@dataclass(frozen=True)
class QueryConfig:
    strategy: str = "entropy"
    aggregation: str = "sum"
    query_size: int = 100
    k: int = 10
    class_weighting: bool = True
    dropout_std_scope: str = "pool"  # or "image"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.query_size < 1:
            raise ValueError(f"query_size must be >= 1, got {self.query_size}")
        if self.strategy in SAMPLE_STRATEGIES and self.k < 2:
            raise ValueError(f"strategy {self.strategy!r} needs k >= 2, got {self.k}")
        if self.dropout_std_scope not in ("pool", "image"):
            raise ValueError(f"dropout_std_scope must be 'pool' or 'image'")

    @property
    def needs_samples(self) -> bool:
        return self.strategy in SAMPLE_STRATEGIES

    @property
    def effective_k(self) -> int:
        return self.k if self.needs_samples else 1


@dataclass(frozen=True)
class ImageScore:
    """Aggregated query score of one pool image."""

    image_id: int
    score: float
    num_predictions: int

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"image {self.image_id}: score {self.score!r} is not finite")


def _entropy_of(probs: Sequence[float]) -> float:
    total = 0.0
    for p in probs:
        if p > 0.0:
            total -= p * math.log(p)
    return max(total, 0.0)


def entropy(det: Detection) -> float:
    """Classification entropy; zero-probability terms contribute nothing."""
    return _entropy_of(det.class_probs)


def prob_margin(det: Detection) -> float:
    """Squared complement of the top-two probability margin."""
    if det.num_classes < 2:
        raise ValueError("probability margin needs at least 2 classes")
    top, second = sorted(det.class_probs, reverse=True)[:2]
    return (1.0 - (top - second)) ** 2


def mc_mean(samples: DropoutSampleSet | Sequence[Detection]) -> Detection:
    """Arithmetic mean over aligned dropout samples."""
    if isinstance(samples, DropoutSampleSet):
        samples = samples.samples
    return mean_detection(samples)


def mutual_information(sample_set: DropoutSampleSet) -> float:
    """Entropy of the mean class distribution minus mean sample entropy.

    Jensen's inequality keeps the estimator nonnegative; tiny negative float
    residue is clamped to zero.
    """
    if sample_set.k < 2:
        raise ValueError(f"mutual information needs K >= 2 samples, got {sample_set.k}")
    c = sample_set.mean.num_classes
    mean_probs = [
        math.fsum(s.class_probs[i] for s in sample_set.samples) / sample_set.k
        for i in range(c)
    ]
    avg_sample_entropy = (
        math.fsum(_entropy_of(s.class_probs) for s in sample_set.samples) / sample_set.k
    )
    return max(0.0, _entropy_of(mean_probs) - avg_sample_entropy)


def sample_std_features(sample_sets: Sequence[DropoutSampleSet]) -> np.ndarray:
    """Per-prediction, per-feature standard deviations across the K samples."""
    rows = []
    for ss in sample_sets:
        if ss.k < 2:
            raise ValueError(f"feature-std scores need K >= 2 samples, got {ss.k}")
        matrix = np.array([s.as_vector() for s in ss.samples], dtype=np.float64)
        rows.append(matrix.std(axis=0))
    return np.asarray(rows)


def standardized_max_scores(stds: np.ndarray) -> np.ndarray:
    """Z-standardize each feature column, then take the row-wise maximum.

    Columns with zero variance across the population map to zero.
    """
    stds = np.asarray(stds, dtype=np.float64)
    if stds.shape[0] < 2:
        raise ValueError("standardization needs at least 2 predictions")
    mu = stds.mean(axis=0)
    sigma = stds.std(axis=0)
    z = np.zeros_like(stds)
    nonzero = sigma > 0.0
    z[:, nonzero] = (stds[:, nonzero] - mu[nonzero]) / sigma[nonzero]
    return z.max(axis=1)


def dropout_std_scores(sample_sets: Sequence[DropoutSampleSet]) -> list[float]:
    """Maximum standardized feature-std per prediction, over the whole pool."""
    if len(sample_sets) < 2:
        raise ValueError("feature-std standardization needs at least 2 pool predictions")
    return [float(v) for v in standardized_max_scores(sample_std_features(sample_sets))]


def class_weights(manifest: DatasetManifest, labeled_ids: Sequence[int]) -> np.ndarray:
    """Inverse-frequency weights over the labeled instance counts.

    w_c = N / (C * max(n_c, 1)); balanced labels give all-ones.
    """
    ids = set(labeled_ids)
    if not ids:
        raise ValueError("class weights need a nonempty labeled set")
    c = manifest.num_classes
    counts = np.zeros(c, dtype=np.float64)
    for rec in manifest.records_by_id().values():
        if rec.image_id in ids:
            for ann in rec.annotations:
                counts[ann.category_id] += 1
    total = counts.sum()
    if total == 0:
        return np.ones(c, dtype=np.float64)
    return total / (c * np.maximum(counts, 1.0))


def aggregate(scores: Sequence[float], mode: str) -> float:
    """Reduce per-prediction scores to one image score; empty lists give 0."""
    if mode not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {mode!r}")
    values = list(scores)
    if not values:
        return 0.0
    if mode == "sum":
        return float(math.fsum(values))
    if mode == "avg":
        return float(math.fsum(values) / len(values))
    return float(max(values))


def select_query(
    image_scores: Sequence[ImageScore], query_size: int, rng: np.random.Generator
) -> list[int]:
    """Top-scoring image ids, ties broken by a seeded random permutation."""
    if query_size > len(image_scores):
        raise ValueError(
            f"query size {query_size} exceeds the {len(image_scores)} scored images"
        )
    ordered = sorted(image_scores, key=lambda s: s.image_id)
    tiebreak = rng.permutation(len(ordered))
    ranked = sorted(
        range(len(ordered)), key=lambda i: (-ordered[i].score, tiebreak[i])
    )
    return [ordered[i].image_id for i in ranked[:query_size]]


# Array variants used on whole prediction batches inside the AL loop; they
# must agree with the scalar operations above (covered by tests).


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0.0, probs * np.log(probs), 0.0)
    return np.maximum(-terms.sum(axis=1), 0.0)


def prob_margin_rows(probs: np.ndarray) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[1] < 2:
        raise ValueError("probability margin needs at least 2 classes")
    part = np.partition(probs, probs.shape[1] - 2, axis=1)
    top = part[:, -1]
    second = part[:, -2]
    return (1.0 - (top - second)) ** 2


def mutual_information_rows(sample_probs: np.ndarray) -> np.ndarray:
    """MI per prediction from a (N, K, C) tensor of sample class probabilities."""
    sample_probs = np.asarray(sample_probs, dtype=np.float64)
    if sample_probs.shape[1] < 2:
        raise ValueError("mutual information needs K >= 2 samples")
    mean_probs = sample_probs.mean(axis=1)
    mean_entropy = entropy_rows(mean_probs)
    flat = sample_probs.reshape(-1, sample_probs.shape[2])
    per_sample = entropy_rows(flat).reshape(sample_probs.shape[0], sample_probs.shape[1])
    return np.maximum(0.0, mean_entropy - per_sample.mean(axis=1))
