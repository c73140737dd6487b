"""Command-line entry point tying generate, run and evaluate together."""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

import yaml


def _parse_set_overrides(pairs: list[str]) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise _CliError("config", f"--set expects key.path=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        overrides[key.strip()] = yaml.safe_load(raw)
    return overrides


class _CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _cmd_generate(args) -> int:
    from alod import config as config_mod
    from alod import synthgen
    from alod.glyphs import GlyphArchive, builtin_glyphs

    overrides = _parse_set_overrides(args.set or [])
    flags: dict = {}
    if args.seed is not None:
        flags["dataset.seed"] = args.seed
    if args.source is not None:
        flags["dataset.source"] = args.source
    cfg = config_mod.load_config(args.config, overrides, flags)
    if args.glyph_images:
        if not args.glyph_labels:
            raise _CliError("config", "--glyph-images needs --glyph-labels")
        archive = GlyphArchive.from_idx(
            Path(args.glyph_images).read_bytes(),
            Path(args.glyph_labels).read_bytes(),
            source=cfg.dataset.source,
            label_offset=args.label_offset,
        )
    else:
        archive = builtin_glyphs(cfg.dataset.source)
    out = Path(args.out)
    manifest = synthgen.generate_dataset(cfg.dataset, out, archive=archive, jobs=args.jobs)
    config_mod.write_resolved(cfg, out)
    sizes = {split: len(records) for split, records in manifest.splits.items()}
    print(f"generated {manifest.name} at {out}: {sizes}")
    return 0


def _cmd_stats(args) -> int:
    from alod import coco, synthgen

    manifest = coco.load_manifest(coco.resolve_dataset_path(args.manifest))
    stats = synthgen.dataset_stats(manifest, args.split)
    if args.json:
        print(
            json.dumps(
                {
                    "std_cx": stats.std_cx,
                    "std_cy": stats.std_cy,
                    "std_w": stats.std_w,
                    "std_h": stats.std_h,
                    "mean_instances": stats.mean_instances,
                    "num_images": stats.num_images,
                    "num_annotations": stats.num_annotations,
                }
            )
        )
    else:
        print(f"split {args.split!r}: {stats.num_images} images, {stats.num_annotations} boxes")
        print(f"std  c_x={stats.std_cx:.3f}  c_y={stats.std_cy:.3f}  w={stats.std_w:.3f}  h={stats.std_h:.3f}")
        print(f"mean instances/image = {stats.mean_instances:.3f}")
    return 0


def _cmd_run(args) -> int:
    import dataclasses

    from alod import coco, config as config_mod, orchestrator

    overrides = _parse_set_overrides(args.set or [])
    flags: dict = {}
    if args.manifest:
        flags["al.manifest_path"] = args.manifest
    if args.query_size is not None:
        flags["query.query_size"] = args.query_size
    cfg = config_mod.load_config(args.config, overrides, flags)
    if not cfg.al.manifest_path:
        raise _CliError("config", "no dataset manifest configured (al.manifest_path or --manifest)")
    manifest = coco.load_manifest(coco.resolve_dataset_path(cfg.al.manifest_path))

    out = Path(args.out or cfg.output_root)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.write_resolved(cfg, out)

    al = cfg.al
    if args.backend:
        backend_cmd = tuple(shlex.split(args.backend))
    elif al.backend_cmd:
        backend_cmd = tuple(al.backend_cmd)
    else:
        sim_path = out / "simconfig.json"
        with open(sim_path, "w") as fh:
            json.dump(dataclasses.asdict(cfg.sim), fh, sort_keys=True)
        backend_cmd = (sys.executable, "-m", "alod.simbackend", "--config", str(sim_path))
    al = dataclasses.replace(al, backend_cmd=backend_cmd)

    strategies = args.strategies.split(",") if args.strategies else [cfg.al.query.strategy]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(al.seeds)
    results, failures = orchestrator.run_matrix(
        al, manifest, strategies, seeds, out, jobs=args.jobs
    )
    for (strategy, seed), run in sorted(results.items()):
        final = run.steps[-1]
        print(
            f"{strategy} seed {seed}: {len(run.steps)} steps, "
            f"final |L|={final.labeled_images} images / {final.labeled_instances} boxes, "
            f"mAP50={final.map50:.3f}"
        )
    for (strategy, seed), err in sorted(failures.items()):
        print(f"FAILED {strategy} seed {seed}: {err}", file=sys.stderr)
    if failures:
        print(f"alod: error [backend] {len(failures)} run(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_evaluate(args) -> int:
    from alod import evaluation
    from alod.runlog import load_runlog

    collections: dict[str, dict[str, list]] = {}
    for runs_dir in args.runs:
        for runlog_path in sorted(Path(runs_dir).glob("*/seed_*/runlog.json")):
            run = load_runlog(runlog_path.parent)
            collections.setdefault(run.dataset, {}).setdefault(run.strategy, []).append(run)
    if not collections:
        raise _CliError("io", f"no runlogs found under {args.runs}")
    with open(args.max_performance) as fh:
        table = evaluation.MaxPerformanceTable.from_json_dict(json.load(fh))
    out = evaluation.report(collections, table, args.out, svg=args.svg)
    print(f"report written to {out}")
    return 0


def _cmd_protocol_check(args) -> int:
    import tempfile

    from alod import conformance

    backend_cmd = shlex.split(args.backend) if args.backend else [
        sys.executable, "-m", "alod.simbackend",
    ]
    workdir = args.workdir or tempfile.mkdtemp(prefix="alod-protocol-check-")
    problems = conformance.check_backend(backend_cmd, workdir, k=args.k)
    if problems:
        for problem in problems:
            print(f"protocol-check: FAIL: {problem}", file=sys.stderr)
        raise _CliError("protocol", f"{len(problems)} conformance problem(s)")
    print(f"protocol-check: PASS ({' '.join(backend_cmd)})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alod",
        description="Sandbox for benchmarking active-learning query strategies in object detection.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic detection dataset")
    p.add_argument("--config", default=None, help="experiment config YAML")
    p.add_argument("--out", required=True, help="dataset output root")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--source", choices=["digits", "letters"], default=None)
    p.add_argument("--glyph-images", default=None, help="IDX image file (optional)")
    p.add_argument("--glyph-labels", default=None, help="IDX label file (optional)")
    p.add_argument("--label-offset", type=int, default=0, help="subtract from raw labels")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("stats", help="dataset variability statistics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("run", help="run the active-learning matrix")
    p.add_argument("--config", default=None, help="experiment config YAML")
    p.add_argument("--manifest", default=None, help="dataset manifest path")
    p.add_argument("--backend", default=None, help="backend command (default: built-in simulator)")
    p.add_argument("--strategies", default=None, help="comma-separated strategy list")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--query-size", type=int, default=None, dest="query_size")
    p.add_argument("--out", default=None, help="output directory (default: config output_root)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("evaluate", help="build the evaluation report from runlogs")
    p.add_argument("--runs", nargs="+", required=True, help="run matrix directories")
    p.add_argument("--max-performance", required=True, help="JSON of full-data mAP50 per dataset")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--svg", action="store_true", help="also write SVG curve plots")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("protocol-check", help="validate a backend against the wire protocol")
    p.add_argument("--backend", default=None, help="backend command (default: built-in simulator)")
    p.add_argument("--workdir", default=None)
    p.add_argument("--k", type=int, default=3, help="dropout samples to request")
    p.set_defaults(func=_cmd_protocol_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)
    from alod import config as config_mod
    from alod import protocol

    try:
        return args.func(args)
    except _CliError as err:
        print(f"alod: error [{err.category}] {err}", file=sys.stderr)
        return 1
    except config_mod.ConfigError as err:
        print(f"alod: error [config] {err}", file=sys.stderr)
        return 1
    except protocol.ProtocolError as err:
        print(f"alod: error [protocol] {err}", file=sys.stderr)
        return 1
    except protocol.BackendError as err:
        print(f"alod: error [backend] {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"alod: error [io] {err}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as err:
        print(f"alod: error [config] {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
