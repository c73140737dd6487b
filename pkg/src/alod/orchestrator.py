"""The pool-based active-learning loop.

One run executes, for t = 0..T: train the backend from scratch on the
labeled set, evaluate test mAP@50, and (except at the final step) score the
unlabeled pool, select a query and move its ground-truth labels into the
labeled set. Step record t therefore holds the performance of the model
trained on exactly u_init + t * query_size images.

Runs persist incrementally and resume at the first missing step.
"""

from __future__ import annotations

import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from alod import coco, evaluation, postproc, protocol, query
from alod.runlog import ALStepRecord, RunLog, load_runlog, save_runlog
from alod.types import DatasetManifest, PoolState, count_instances

log = logging.getLogger(__name__)

_INIT_SALT = 101
_QUERY_SALT = 211


@dataclass(frozen=True)
class ALConfig:
    """Loop hyperparameters plus the backend invocation."""

    manifest_path: str = ""
    u_init: int = 100
    steps: int = 8
    query: query.QueryConfig = field(default_factory=query.QueryConfig)
    postproc: postproc.PostprocConfig = field(default_factory=postproc.PostprocConfig)
    test_score_threshold: float = 0.05
    backend_cmd: tuple[str, ...] | None = None
    seeds: tuple[int, ...] = (0, 1, 2, 3)
    backend_timeout: float = 600.0
    train_split: str = "train"
    test_split: str = "test"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"need at least 1 AL step, got {self.steps}")
        if self.u_init < 1:
            raise ValueError(f"u_init must be >= 1, got {self.u_init}")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be nonnegative")

    def resolved_backend_cmd(self) -> tuple[str, ...]:
        if self.backend_cmd:
            return tuple(self.backend_cmd)
        return (sys.executable, "-m", "alod.simbackend")

    def semantic_dict(self, strategy: str, dataset: str) -> dict:
        """The configuration content that identifies a run (seed excluded)."""
        return {
            "dataset": dataset,
            "strategy": strategy,
            "u_init": self.u_init,
            "steps": self.steps,
            "query": {
                "aggregation": self.query.aggregation,
                "query_size": self.query.query_size,
                "k": self.query.effective_k,
                "class_weighting": self.query.class_weighting,
                "dropout_std_scope": self.query.dropout_std_scope,
            },
            "postproc": {
                "score_threshold": self.postproc.score_threshold,
                "nms_iou": self.postproc.nms_iou,
                "per_class": self.postproc.per_class,
            },
            "test_score_threshold": self.test_score_threshold,
            "train_split": self.train_split,
            "test_split": self.test_split,
        }


def config_fingerprint(payload: Mapping) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def init_pool(manifest: DatasetManifest, u_init: int, rng: np.random.Generator,
              train_split: str = "train") -> PoolState:
    """Uniform initial labeled set, deterministic per rng state."""
    ids = sorted(manifest.split_ids(train_split))
    if u_init > len(ids):
        raise ValueError(f"u_init {u_init} exceeds the {len(ids)} train images")
    perm = rng.permutation(len(ids))
    labeled = frozenset(ids[i] for i in perm[:u_init])
    return PoolState(labeled=labeled, unlabeled=frozenset(ids) - labeled)


def score_pool_predictions(
    predictions: Mapping[int, protocol.ImagePredictions],
    qcfg: query.QueryConfig,
    pcfg: postproc.PostprocConfig,
    weights: np.ndarray | None,
    rng: np.random.Generator,
) -> list[query.ImageScore]:
    """Post-process each image's detections and aggregate uncertainty scores.

    The mean prediction decides survival; dropout samples are read at the
    surviving anchors. The feature-std strategy standardizes over the whole
    pool in a second pass (or per image when so configured).
    """
    ids = sorted(predictions)
    if qcfg.strategy == "random":
        return [query.ImageScore(i, float(rng.random()), 0) for i in ids]

    scores: list[query.ImageScore] = []
    pending_std: list[tuple[int, np.ndarray, np.ndarray, int]] = []
    for image_id in ids:
        pred = predictions[image_id]
        surv = postproc.postprocess_indices(
            pred.boxes, pred.scores, pcfg, pred.class_ids if pcfg.per_class else None
        )
        n = int(surv.size)
        if n and qcfg.needs_samples and pred.samples is None:
            raise protocol.ProtocolError(
                f"strategy {qcfg.strategy!r} needs dropout samples, image {image_id} has none"
            )
        classes = pred.class_ids[surv] if n else np.zeros(0, dtype=np.int64)
        if qcfg.strategy == "mc_dropout":
            stds = (
                pred.samples[surv].std(axis=1) if n else np.zeros((0, 5 + pred.probs.shape[1]))
            )
            pending_std.append((image_id, stds, classes, n))
            continue
        if qcfg.strategy == "entropy":
            values = query.entropy_rows(pred.probs[surv])
        elif qcfg.strategy == "prob_margin":
            values = query.prob_margin_rows(pred.probs[surv]) if n else np.zeros(0)
        else:  # mutual_information
            values = (
                query.mutual_information_rows(pred.samples[surv][:, :, 5:])
                if n
                else np.zeros(0)
            )
        if weights is not None and n:
            values = values * weights[classes]
        scores.append(query.ImageScore(image_id, query.aggregate(values.tolist(), qcfg.aggregation), n))

    if qcfg.strategy == "mc_dropout":
        if qcfg.dropout_std_scope == "image":
            for image_id, stds, classes, n in pending_std:
                if stds.shape[0] >= 2:
                    values = query.standardized_max_scores(stds)
                else:
                    values = np.zeros(stds.shape[0])
                if weights is not None and n:
                    values = values * weights[classes]
                scores.append(
                    query.ImageScore(image_id, query.aggregate(values.tolist(), qcfg.aggregation), n)
                )
        else:
            stacked = np.concatenate([p[1] for p in pending_std], axis=0)
            if stacked.shape[0] < 2:
                # Not enough surviving predictions for pool standardization;
                # every image scores zero and the tiebreak decides.
                all_values = np.zeros(stacked.shape[0])
            else:
                all_values = query.standardized_max_scores(stacked)
            offset = 0
            for image_id, stds, classes, n in pending_std:
                values = all_values[offset : offset + n]
                offset += n
                if weights is not None and n:
                    values = values * weights[classes]
                scores.append(
                    query.ImageScore(image_id, query.aggregate(values.tolist(), qcfg.aggregation), n)
                )
    return scores


def _postprocessed_arrays(
    pred: protocol.ImagePredictions, pcfg: postproc.PostprocConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    surv = postproc.postprocess_indices(
        pred.boxes, pred.scores, pcfg, pred.class_ids if pcfg.per_class else None
    )
    return pred.boxes[surv], pred.scores[surv], pred.class_ids[surv]


def run_al(
    config: ALConfig,
    manifest: DatasetManifest,
    strategy: str,
    seed: int,
    run_dir: str | Path,
) -> RunLog:
    """Execute (or resume) one AL run and persist its log incrementally."""
    run_dir = Path(run_dir)
    qcfg = query.QueryConfig(
        strategy=strategy,
        aggregation=config.query.aggregation,
        query_size=config.query.query_size,
        k=config.query.k if strategy in query.SAMPLE_STRATEGIES else 1,
        class_weighting=config.query.class_weighting,
        dropout_std_scope=config.query.dropout_std_scope,
    )
    train_ids = manifest.split_ids(config.train_split)
    budget = config.u_init + config.steps * qcfg.query_size
    if budget > len(train_ids):
        raise ValueError(
            f"label budget u_init + T*|Q| = {budget} exceeds the "
            f"{len(train_ids)} train images"
        )
    fingerprint = config_fingerprint(config.semantic_dict(strategy, manifest.name))
    test_ids = sorted(manifest.split_ids(config.test_split))
    by_id = manifest.records_by_id()
    test_records = [by_id[i] for i in test_ids]
    test_pcfg = postproc.PostprocConfig(
        score_threshold=config.test_score_threshold,
        nms_iou=config.postproc.nms_iou,
        per_class=config.postproc.per_class,
    )
    weights_enabled = qcfg.class_weighting and qcfg.strategy != "random"

    completed: list[ALStepRecord] = []
    if (run_dir / "runlog.json").exists():
        previous = load_runlog(run_dir)
        if previous.fingerprint != fingerprint:
            raise ValueError(
                f"existing run in {run_dir} has fingerprint {previous.fingerprint}, "
                f"current config gives {fingerprint}; refusing to resume"
            )
        if previous.seed != seed or previous.strategy != strategy:
            raise ValueError(f"existing run in {run_dir} belongs to another (strategy, seed)")
        completed = list(previous.steps)
        log.info("resuming %s/seed %d at step %d", strategy, seed, len(completed))

    pool = init_pool(
        manifest, config.u_init, np.random.default_rng(np.random.SeedSequence((seed, _INIT_SALT))),
        config.train_split,
    )
    for record in completed:
        if record.queried_ids:
            pool = pool.apply_query(record.step, record.queried_ids)

    backend_cmd = config.resolved_backend_cmd()
    manifest_path = str(Path(config.manifest_path).resolve()) if config.manifest_path else None
    records = completed
    checkpoint: str | None = None  # opaque path echoed between steps
    for t in range(len(completed), config.steps + 1):
        started = time.monotonic()
        labeled = sorted(pool.labeled)
        pool_ids = sorted(pool.unlabeled) if t < config.steps else []
        step_dir = run_dir / "steps" / f"step_{t:03d}"
        image_index = {
            str(i): {
                "file_name": by_id[i].file_path,
                "width": by_id[i].width,
                "height": by_id[i].height,
            }
            for i in (*pool_ids, *test_ids)
        }
        protocol.write_request(
            step_dir,
            {
                "phase": "train_predict",
                "step": t,
                "run_seed": seed,
                "k": qcfg.effective_k,
                "checkpoint": checkpoint,
                "manifest_path": manifest_path,
                "labeled": coco.split_to_coco([by_id[i] for i in labeled], manifest.categories),
                "pool_image_ids": pool_ids,
                "test_image_ids": test_ids,
                "images": image_index,
            },
        )
        protocol.invoke_backend(backend_cmd, step_dir, timeout=config.backend_timeout)
        predictions, status = protocol.read_response(
            step_dir,
            expected_ids=[*pool_ids, *test_ids],
            num_classes=manifest.num_classes,
            require_samples_for=pool_ids if qcfg.needs_samples else (),
            k=qcfg.effective_k,
        )
        checkpoint = status.get("checkpoint")

        test_preds = {i: _postprocessed_arrays(predictions[i], test_pcfg) for i in test_ids}
        map50 = evaluation.map50_arrays(test_preds, test_records, manifest.num_classes)

        queried: tuple[int, ...] = ()
        if t < config.steps:
            rng = np.random.default_rng(np.random.SeedSequence((seed, _QUERY_SALT, t)))
            weights = (
                query.class_weights(manifest, labeled) if weights_enabled else None
            )
            image_scores = score_pool_predictions(
                {i: predictions[i] for i in pool_ids}, qcfg, config.postproc, weights, rng
            )
            queried = tuple(query.select_query(image_scores, qcfg.query_size, rng))

        record = ALStepRecord(
            step=t,
            labeled_images=len(labeled),
            labeled_instances=count_instances(manifest, labeled),
            map50=map50,
            queried_ids=queried,
            seconds=time.monotonic() - started,
        )
        records = records + [record]
        if queried:
            pool = pool.apply_query(t, queried)
        run = RunLog(
            strategy=strategy, seed=seed, dataset=manifest.name,
            steps=tuple(records), fingerprint=fingerprint,
        )
        save_runlog(run_dir, run)
    return load_runlog(run_dir)


def run_matrix(
    config: ALConfig,
    manifest: DatasetManifest,
    strategies: Sequence[str],
    seeds: Sequence[int],
    out_dir: str | Path,
    jobs: int = 1,
) -> tuple[dict[tuple[str, int], RunLog], dict[tuple[str, int], Exception]]:
    """Cartesian product of (strategy, seed) runs with paired initial pools.

    Individual failures do not stop the matrix; they are returned alongside
    the completed runs.
    """
    if not strategies or not seeds:
        raise ValueError("need at least one strategy and one seed")
    out_dir = Path(out_dir)
    tasks = [(s, seed) for s in strategies for seed in seeds]

    def one(task: tuple[str, int]):
        strategy, seed = task
        return run_al(config, manifest, strategy, seed, out_dir / strategy / f"seed_{seed}")

    results: dict[tuple[str, int], RunLog] = {}
    failures: dict[tuple[str, int], Exception] = {}
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(one, task): task for task in tasks}
            for future, task in futures.items():
                try:
                    results[task] = future.result()
                except Exception as err:
                    log.error("run %s failed: %s", task, err)
                    failures[task] = err
    else:
        for task in tasks:
            try:
                results[task] = one(task)
            except Exception as err:
                log.error("run %s failed: %s", task, err)
                failures[task] = err
    return results, failures
