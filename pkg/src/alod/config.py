"""Layered experiment configuration.

A YAML file provides values, command-line overrides win over the file, and
explicit flags win over both. Unknown keys are rejected with their full key
path so typos never pass silently. The resolved configuration is echoed to
the run directory as config.resolved.json together with its fingerprint.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from alod.orchestrator import ALConfig, config_fingerprint
from alod.postproc import PostprocConfig
from alod.query import QueryConfig
from alod.simbackend import SimConfig
from alod.synthgen import SynthConfig


class ConfigError(ValueError):
    """Invalid configuration; message carries the offending key path."""


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: SynthConfig = field(default_factory=SynthConfig)
    al: ALConfig = field(default_factory=ALConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    output_root: str = "runs"

    def to_dict(self) -> dict:
        """Canonical nested dict in the same shape the config file uses."""

        def plain(value):
            if dataclasses.is_dataclass(value) and not isinstance(value, type):
                return {f.name: plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
            if isinstance(value, tuple):
                return [plain(v) for v in value]
            if isinstance(value, dict):
                return {k: plain(v) for k, v in value.items()}
            return value

        al = plain(self.al)
        query = al.pop("query")
        postproc = al.pop("postproc")
        return {
            "dataset": plain(self.dataset),
            "al": al,
            "query": query,
            "postproc": postproc,
            "sim": plain(self.sim),
            "output_root": self.output_root,
        }

    def fingerprint(self) -> str:
        return config_fingerprint(self.to_dict())


_TUPLE_KEYS = {
    ("dataset", "image_size"),
    ("dataset", "scale_range"),
    ("dataset", "shear_range"),
    ("al", "seeds"),
    ("al", "backend_cmd"),
}


def _build_section(cls, values: Mapping, path: str, tuple_fields: set[str]):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key {path}.{sorted(unknown)[0]}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, value in values.items():
        if key in tuple_fields and isinstance(value, (list, tuple)):
            value = tuple(value)
        # YAML reads 600 as int; keep float fields float so fingerprints of
        # equal configurations are byte-stable.
        if hints.get(key) is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid value under {path!r}: {err}") from err


def _deep_merge(base: dict, extra: Mapping) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _nest_dotted(overrides: Mapping[str, Any]) -> dict:
    nested: dict = {}
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} conflicts with a scalar value")
        node[parts[-1]] = value
    return nested


def build_experiment_config(values: Mapping) -> ExperimentConfig:
    known = {"dataset", "al", "query", "postproc", "sim", "output_root"}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")
    dataset = _build_section(
        SynthConfig, values.get("dataset", {}), "dataset", {"image_size", "scale_range", "shear_range"}
    )
    qcfg = _build_section(QueryConfig, values.get("query", {}), "query", set())
    pcfg = _build_section(PostprocConfig, values.get("postproc", {}), "postproc", set())
    al_values = dict(values.get("al", {}))
    for key in ("seeds", "backend_cmd"):
        if key in al_values and isinstance(al_values[key], (list, tuple)):
            al_values[key] = tuple(al_values[key])
    al_values["query"] = qcfg
    al_values["postproc"] = pcfg
    al = _build_section(ALConfig, al_values, "al", set())
    sim = _build_section(SimConfig, values.get("sim", {}), "sim", set())
    output_root = values.get("output_root", "runs")
    if not isinstance(output_root, str):
        raise ConfigError("output_root must be a string")
    return ExperimentConfig(dataset=dataset, al=al, sim=sim, output_root=output_root)


def load_config(
    path: str | Path | None, *override_maps: Mapping[str, Any]
) -> ExperimentConfig:
    """Load a config file and apply override maps (later maps win).

    Override keys are dotted paths like "query.query_size".
    """
    values: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a mapping")
        values = loaded
    for overrides in override_maps:
        if overrides:
            values = _deep_merge(values, _nest_dotted(overrides))
    return build_experiment_config(values)


def write_resolved(config: ExperimentConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"config": config.to_dict(), "fingerprint": config.fingerprint()}
    path = out_dir / "config.resolved.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
    return path


def load_resolved(path: str | Path) -> ExperimentConfig:
    with open(path) as fh:
        payload = json.load(fh)
    return build_experiment_config(payload["config"])
