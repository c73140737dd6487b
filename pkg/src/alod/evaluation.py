"""Measurement: detection matching, mAP at IoU 0.5, AL-curve assembly on the
image and instance axes, area under the curve, reference-mark crossings,
Spearman rank correlations and report emission.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from alod import kernels
from alod.runlog import RunLog
from alod.types import Annotation, Detection, ImageRecord


# ---------------------------------------------------------------------------
# detection matching and mAP


def match_arrays(
    det_boxes: np.ndarray,
    det_scores: np.ndarray,
    det_classes: np.ndarray,
    gt_boxes: np.ndarray,
    gt_classes: np.ndarray,
    iou_threshold: float = 0.5,
) -> np.ndarray:
    """True-positive flags for one image, in input order.

    Detections are matched per class in descending score order (ties keep
    input order); each ground-truth box is matched at most once, to the free
    box with the highest IoU at or above the threshold.
    """
    nd = det_boxes.shape[0]
    tp = np.zeros(nd, dtype=bool)
    if nd == 0 or gt_boxes.shape[0] == 0:
        return tp
    for cls in np.unique(det_classes):
        det_sel = np.nonzero(det_classes == cls)[0]
        gt_sel = np.nonzero(gt_classes == cls)[0]
        if gt_sel.size == 0:
            continue
        order = det_sel[np.argsort(-det_scores[det_sel], kind="stable")]
        matched = kernels.greedy_match(det_boxes[order], gt_boxes[gt_sel], iou_threshold)
        tp[order[matched >= 0]] = True
    return tp


def _gt_arrays(record: ImageRecord) -> tuple[np.ndarray, np.ndarray]:
    boxes = np.array([a.box.as_tuple() for a in record.annotations], dtype=np.float64).reshape(-1, 4)
    classes = np.array([a.category_id for a in record.annotations], dtype=np.int64)
    return boxes, classes


def match_detections(
    preds: Sequence[Detection],
    gts: Sequence[Annotation],
    iou_threshold: float = 0.5,
) -> tuple[list[bool], dict[int, int]]:
    """TP/FP flags (input order) plus ground-truth counts per class."""
    det_boxes = np.array([d.box.as_tuple() for d in preds], dtype=np.float64).reshape(-1, 4)
    det_scores = np.array([d.score for d in preds], dtype=np.float64)
    det_classes = np.array([d.argmax_class for d in preds], dtype=np.int64)
    gt_boxes = np.array([a.box.as_tuple() for a in gts], dtype=np.float64).reshape(-1, 4)
    gt_classes = np.array([a.category_id for a in gts], dtype=np.int64)
    tp = match_arrays(det_boxes, det_scores, det_classes, gt_boxes, gt_classes, iou_threshold)
    counts: dict[int, int] = {}
    for c in gt_classes:
        counts[int(c)] = counts.get(int(c), 0) + 1
    return [bool(v) for v in tp], counts


def average_precision(tp_sorted: np.ndarray, num_gt: int) -> float:
    """All-point interpolated AP from already score-sorted TP flags."""
    if num_gt == 0:
        raise ValueError("average precision is undefined without ground truth")
    if tp_sorted.size == 0:
        return 0.0
    tp_cum = np.cumsum(tp_sorted.astype(np.float64))
    fp_cum = np.cumsum((~tp_sorted).astype(np.float64))
    recall = tp_cum / num_gt
    precision = tp_cum / (tp_cum + fp_cum)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changed = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]))


def map50_arrays(
    preds_by_image: Mapping[int, tuple[np.ndarray, np.ndarray, np.ndarray]],
    records: Sequence[ImageRecord],
    num_classes: int,
    iou_threshold: float = 0.5,
) -> float:
    """mAP over classes with ground truth; predictions given as array triples
    (boxes, scores, class_ids) per image id."""
    gt_counts = np.zeros(num_classes, dtype=np.int64)
    per_class_scores: list[list[tuple[float, int, int, bool]]] = [[] for _ in range(num_classes)]
    for rec in records:
        gt_boxes, gt_classes = _gt_arrays(rec)
        for c in gt_classes:
            gt_counts[c] += 1
        entry = preds_by_image.get(rec.image_id)
        if entry is None:
            continue
        boxes, scores, classes = entry
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        scores = np.asarray(scores, dtype=np.float64)
        classes = np.asarray(classes, dtype=np.int64)
        tp = match_arrays(boxes, scores, classes, gt_boxes, gt_classes, iou_threshold)
        for i in range(boxes.shape[0]):
            per_class_scores[classes[i]].append(
                (-float(scores[i]), rec.image_id, i, bool(tp[i]))
            )
    if gt_counts.sum() == 0:
        raise ValueError("no ground-truth instances in the evaluated split")
    aps = []
    for c in range(num_classes):
        if gt_counts[c] == 0:
            continue
        rows = sorted(per_class_scores[c])
        tp_sorted = np.array([r[3] for r in rows], dtype=bool)
        aps.append(average_precision(tp_sorted, int(gt_counts[c])))
    return float(np.mean(aps))


def map50(
    preds_by_image: Mapping[int, Sequence[Detection]],
    records: Sequence[ImageRecord],
    num_classes: int,
    iou_threshold: float = 0.5,
) -> float:
    """mAP at the given IoU threshold for Detection-valued predictions."""
    converted = {}
    for image_id, dets in preds_by_image.items():
        converted[image_id] = (
            np.array([d.box.as_tuple() for d in dets], dtype=np.float64).reshape(-1, 4),
            np.array([d.score for d in dets], dtype=np.float64),
            np.array([d.argmax_class for d in dets], dtype=np.int64),
        )
    return map50_arrays(converted, records, num_classes, iou_threshold)


# ---------------------------------------------------------------------------
# AL curves


@dataclass(frozen=True)
class ALCurve:
    """Seed-averaged learning curve on the image or instance axis."""

    axis: str
    xs: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]
    num_seeds: int

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ValueError("curve x values must be strictly increasing")
        if any(s < 0 for s in self.stds):
            raise ValueError("curve stds must be nonnegative")
        if any(not 0.0 <= m <= 1.0 for m in self.means):
            raise ValueError("curve means must lie in [0, 1]")


def build_curve(
    runlogs: Sequence[RunLog], axis: str, grid: Sequence[float] | None = None
) -> ALCurve:
    """Interpolate each seed's curve onto a common grid and average.

    The default grid is the union of all seeds' x values restricted to the
    interval every seed covers; no extrapolation ever happens.
    """
    if not runlogs:
        raise ValueError("need at least one runlog")
    xs_per_seed = []
    ys_per_seed = []
    for log in runlogs:
        xs = np.asarray(log.axis_values(axis), dtype=np.float64)
        ys = np.asarray(log.map_values(), dtype=np.float64)
        if np.any(np.diff(xs) <= 0):
            raise ValueError(f"runlog (strategy={log.strategy}, seed={log.seed}) has non-increasing x")
        xs_per_seed.append(xs)
        ys_per_seed.append(ys)
    lo = max(float(xs[0]) for xs in xs_per_seed)
    hi = min(float(xs[-1]) for xs in xs_per_seed)
    if lo > hi:
        raise ValueError("seeds share no common x interval")
    if grid is None:
        merged = np.unique(np.concatenate(xs_per_seed))
        grid_arr = merged[(merged >= lo) & (merged <= hi)]
    else:
        grid_arr = np.asarray(sorted(grid), dtype=np.float64)
        if grid_arr[0] < lo or grid_arr[-1] > hi:
            raise ValueError(f"grid extends beyond the common interval [{lo}, {hi}]")
    stack = np.vstack(
        [np.interp(grid_arr, xs, ys) for xs, ys in zip(xs_per_seed, ys_per_seed)]
    )
    return ALCurve(
        axis=axis,
        xs=tuple(float(x) for x in grid_arr),
        means=tuple(float(v) for v in stack.mean(axis=0)),
        stds=tuple(float(v) for v in stack.std(axis=0)),
        num_seeds=len(runlogs),
    )


def auc(curve: ALCurve, up_to: float | None = None) -> float:
    """Trapezoidal area under the mean curve from its first grid point."""
    xs = np.asarray(curve.xs)
    ys = np.asarray(curve.means)
    x_end = float(xs[-1]) if up_to is None else float(up_to)
    if x_end < xs[0] or x_end > xs[-1]:
        raise ValueError(f"upper limit {x_end} outside the curve domain [{xs[0]}, {xs[-1]}]")
    total = 0.0
    for i in range(len(xs) - 1):
        if xs[i + 1] <= x_end:
            total += 0.5 * (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i])
            if xs[i + 1] == x_end:
                break
        else:
            y_end = float(np.interp(x_end, xs, ys))
            total += 0.5 * (ys[i] + y_end) * (x_end - xs[i])
            break
    return float(total)


def crossing(curve: ALCurve, level: float) -> float | None:
    """First x where the piecewise-linear mean curve reaches the level.

    Returns None when the level is never reached.
    """
    if not 0.0 < level <= 1.0:
        raise ValueError(f"level {level} outside (0, 1]")
    xs, ys = curve.xs, curve.means
    if ys[0] >= level:
        return float(xs[0])
    for i in range(1, len(xs)):
        if ys[i] >= level:
            frac = (level - ys[i - 1]) / (ys[i] - ys[i - 1])
            return float(xs[i - 1] + frac * (xs[i] - xs[i - 1]))
    return None


# ---------------------------------------------------------------------------
# rank statistics


def fractional_ranks(values: Sequence[float]) -> np.ndarray:
    """Average ranks with ties sharing the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(values_a: Sequence[float], values_b: Sequence[float]) -> float | None:
    """Rank correlation (Pearson on fractional ranks); None when undefined."""
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two equally sized vectors of length >= 2")
    ra = fractional_ranks(a)
    rb = fractional_ranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    return float((da @ db) / denom)


@dataclass(frozen=True)
class MethodRanking:
    """Strategies ordered by a metric; direction tells which end is better."""

    entries: tuple[tuple[str, float | None], ...]
    higher_is_better: bool

    def goodness(self, strategies: Sequence[str]) -> list[float]:
        """Per-strategy scores where larger always means better."""
        lookup = dict(self.entries)
        out = []
        for name in strategies:
            value = lookup[name]
            if value is None:
                out.append(-math.inf)
            else:
                out.append(value if self.higher_is_better else -value)
        return out


def crossing_ranking(
    collections: Mapping[str, Sequence[RunLog]], level: float, axis: str = "images"
) -> MethodRanking:
    """Rank strategies by data needed to reach the level (lower is better)."""
    entries = []
    for strategy in sorted(collections):
        curve = build_curve(list(collections[strategy]), axis)
        entries.append((strategy, crossing(curve, level)))
    return MethodRanking(entries=tuple(entries), higher_is_better=False)


@dataclass(frozen=True)
class CorrelationHistory:
    ts: tuple[float, ...]          # normalized progress in (0, 1]
    rhos: tuple[float, ...]        # nan where the correlation is undefined
    rho_min: float
    rho_mean: float


def correlation_history(
    collections: Mapping[str, Sequence[RunLog]],
    reference: MethodRanking,
    metric: str = "auc",
    axis: str = "images",
) -> CorrelationHistory:
    """Rank correlation of the running metric against a reference ranking.

    Each strategy's x axis is normalized by its own maximum, so strategies
    with different instance budgets stay comparable.
    """
    if metric not in ("map50", "auc"):
        raise ValueError(f"unknown metric {metric!r}")
    strategies = sorted(collections)
    if len(strategies) < 2:
        raise ValueError("correlation history needs at least 2 strategies")
    curves = {s: build_curve(list(collections[s]), axis) for s in strategies}
    norm_grids = []
    for s in strategies:
        xs = np.asarray(curves[s].xs)
        norm_grids.append(xs / xs[-1])
    lo = max(float(g[0]) for g in norm_grids)
    grid = np.unique(np.concatenate(norm_grids))
    grid = grid[(grid >= lo) & (grid <= 1.0)]
    if metric == "auc":
        # cumulative area is identically zero at the common start point
        grid = grid[grid > lo]
    ref_scores = reference.goodness(strategies)
    rhos = []
    for t in grid:
        values = []
        for s in strategies:
            xs = np.asarray(curves[s].xs)
            x_t = t * xs[-1]
            if metric == "map50":
                values.append(float(np.interp(x_t, xs, np.asarray(curves[s].means))))
            else:
                values.append(auc(curves[s], x_t))
        rho = spearman(values, ref_scores)
        rhos.append(math.nan if rho is None else rho)
    valid = [r for r in rhos if not math.isnan(r)]
    if not valid:
        raise ValueError("correlation undefined everywhere (all rankings tied)")
    return CorrelationHistory(
        ts=tuple(float(t) for t in grid),
        rhos=tuple(rhos),
        rho_min=min(valid),
        rho_mean=float(sum(valid) / len(valid)),
    )


def cross_collection_matrix(
    collections_by_dataset: Mapping[str, Mapping[str, Sequence[RunLog]]],
    metric: str = "auc",
    axis: str = "images",
) -> tuple[list[str], np.ndarray]:
    """Spearman matrix of final-AUC strategy rankings between datasets."""
    names = sorted(collections_by_dataset)
    strategy_sets = {n: frozenset(collections_by_dataset[n]) for n in names}
    reference_set = strategy_sets[names[0]]
    for n in names[1:]:
        if strategy_sets[n] != reference_set:
            raise ValueError(
                f"dataset {n!r} covers strategies {sorted(strategy_sets[n])}, "
                f"expected {sorted(reference_set)}"
            )
    strategies = sorted(reference_set)
    finals = {}
    for n in names:
        finals[n] = [
            auc(build_curve(list(collections_by_dataset[n][s]), axis)) for s in strategies
        ]
    matrix = np.eye(len(names))
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            rho = spearman(finals[names[i]], finals[names[j]])
            matrix[i, j] = matrix[j, i] = math.nan if rho is None else rho
    return names, matrix


# ---------------------------------------------------------------------------
# reporting


@dataclass(frozen=True)
class MaxPerformanceTable:
    """Full-data reference performance per dataset (optionally per detector)."""

    values: Mapping[str, float]

    def __post_init__(self):
        for key, value in self.values.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"max performance {key!r}={value} outside [0, 1]")

    def lookup(self, dataset: str) -> float:
        if dataset not in self.values:
            raise KeyError(f"no max-performance entry for dataset {dataset!r}")
        return self.values[dataset]

    @classmethod
    def from_json_dict(cls, doc: Mapping) -> "MaxPerformanceTable":
        flat: dict[str, float] = {}
        for dataset, value in doc.items():
            if isinstance(value, Mapping):
                for detector, v in value.items():
                    flat[f"{dataset}/{detector}"] = float(v)
                    flat.setdefault(dataset, float(v))
            else:
                flat[dataset] = float(value)
        return cls(values=flat)


def _write_table_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _markdown_table(
    header: list[str], rows: list[list], lower_is_better: bool
) -> list[str]:
    """Render rows with the best value per column bolded, second underlined."""
    columns = list(zip(*[r[1:] for r in rows])) if rows else []
    marks: list[dict[int, str]] = []
    for col in columns:
        numeric = [
            (v, i) for i, v in enumerate(col) if isinstance(v, (int, float)) and v is not None
        ]
        numeric.sort(key=lambda p: p[0] if lower_is_better else -p[0])
        col_marks: dict[int, str] = {}
        if len(numeric) > 1:  # a single row leaves nothing to rank
            col_marks[numeric[0][1]] = "bold"
            col_marks[numeric[1][1]] = "underline"
        marks.append(col_marks)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row_idx, row in enumerate(rows):
        cells = [str(row[0])]
        for col_idx, value in enumerate(row[1:]):
            if value is None:
                text = "not crossed"
            elif isinstance(value, float):
                text = f"{value:.1f}" if abs(value) >= 10 else f"{value:.4f}"
            else:
                text = str(value)
            mark = marks[col_idx].get(row_idx)
            if mark == "bold":
                text = f"**{text}**"
            elif mark == "underline":
                text = f"<u>{text}</u>"
            cells.append(text)
        lines.append("| " + " | ".join(cells) + " |")
    return lines


def _plot_curves(curves: Mapping[str, ALCurve], title: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for strategy in sorted(curves):
        c = curves[strategy]
        xs = np.asarray(c.xs)
        means = np.asarray(c.means)
        stds = np.asarray(c.stds)
        ax.plot(xs, means, label=strategy)
        ax.fill_between(xs, means - stds, means + stds, alpha=0.2)
    ax.set_xlabel(c.axis)
    ax.set_ylabel("test mAP@50")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def report(
    collections_by_dataset: Mapping[str, Mapping[str, Sequence[RunLog]]],
    max_performance: MaxPerformanceTable,
    out_dir: str | Path,
    svg: bool = False,
) -> Path:
    """Emit the full report bundle (csv tables, markdown, optional svg)."""
    if not collections_by_dataset:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    datasets = sorted(collections_by_dataset)
    strategies = sorted(next(iter(collections_by_dataset.values())))
    axis_names = {"images": "images", "instances": "boxes"}

    curves: dict[tuple[str, str], dict[str, ALCurve]] = {}
    for dataset in datasets:
        for axis in ("images", "instances"):
            per_strategy = {
                s: build_curve(list(collections_by_dataset[dataset][s]), axis)
                for s in strategies
            }
            curves[(dataset, axis)] = per_strategy
            curve_dir = out / "curves" if len(datasets) == 1 else out / "curves" / dataset
            for s, c in per_strategy.items():
                _write_table_csv(
                    curve_dir / f"{s}_{axis_names[axis]}.csv",
                    ["x", "mean_map50", "std_map50"],
                    [[x, f"{m:.6f}", f"{sd:.6f}"] for x, m, sd in zip(c.xs, c.means, c.stds)],
                )

    md: list[str] = ["# Active-learning evaluation report", ""]
    crossing_tables = {}
    for axis in ("images", "instances"):
        rows = []
        for s in strategies:
            row: list = [s]
            for dataset in datasets:
                level = 0.9 * max_performance.lookup(dataset)
                row.append(crossing(curves[(dataset, axis)][s], level))
            rows.append(row)
        crossing_tables[axis] = rows
        header = ["strategy"] + datasets
        _write_table_csv(
            out / f"crossings_{axis_names[axis]}.csv",
            header,
            [[c if c is not None else "not crossed" for c in row] for row in rows],
        )
        md.append(f"## Data needed to cross the 90% mark ({axis_names[axis]})")
        md.extend(_markdown_table(header, rows, lower_is_better=True))
        md.append("")

    final_rows = []
    for s in strategies:
        row: list = [s]
        for dataset in datasets:
            c = curves[(dataset, "images")][s]
            row.append(c.means[-1])
        final_rows.append(row)
    _write_table_csv(out / "final_map.csv", ["strategy"] + datasets, final_rows)
    md.append("## Final test mAP@50")
    md.extend(_markdown_table(["strategy"] + datasets, final_rows, lower_is_better=False))
    md.append("")

    for axis in ("images", "instances"):
        rows = []
        for s in strategies:
            row: list = [s]
            for dataset in datasets:
                row.append(auc(curves[(dataset, axis)][s]))
            rows.append(row)
        _write_table_csv(out / f"auc_{axis_names[axis]}.csv", ["strategy"] + datasets, rows)
        md.append(f"## Area under the AL curve ({axis_names[axis]})")
        md.extend(_markdown_table(["strategy"] + datasets, rows, lower_is_better=False))
        md.append("")

    names, matrix = cross_collection_matrix(collections_by_dataset)
    _write_table_csv(
        out / "correlations.csv",
        ["dataset"] + names,
        [[names[i]] + [f"{matrix[i, j]:.3f}" for j in range(len(names))] for i in range(len(names))],
    )
    if len(datasets) >= 2:
        md.append("## Cross-dataset rank correlations (final AUC, image axis)")
        md.extend(
            _markdown_table(
                ["dataset"] + names,
                [[names[i]] + [float(matrix[i, j]) for j in range(len(names))] for i in range(len(names))],
                lower_is_better=False,
            )
        )
        md.append("")

    if svg:
        for dataset in datasets:
            for axis in ("images", "instances"):
                _plot_curves(
                    curves[(dataset, axis)],
                    f"{dataset} ({axis_names[axis]})",
                    out / f"curves_{dataset}_{axis_names[axis]}.svg",
                )

    (out / "report.md").write_text("\n".join(md))
    return out
