"""Run configuration: YAML schema, validation, overrides and provenance.

Schema (version 1) mirrors the dataclass fields it populates:

    schema_version: 1
    scenario:            # ScenarioConfig fields (master_seed comes from seeds)
      kind: baseline | migration | constrained
      placement: plant | edge | erdc | aws | all   # all: constrained only
      duration_s: 600
      setpoint_low: 0.0
      setpoint_high: 0.30
      setpoint_period_s: 60
      migration_period_s: 10
      u_bound_tight: 1.0
    plant: {}            # PlantParams fields, e.g. beam_length, k_omega
    mpc: {}              # MpcConfig fields, e.g. horizon, r_weight
    profiles: paper-default   # or a path to a profile CSV
    seeds: [1, 2, 3]
    output_dir: out
    figures: true

Flat overrides use dotted paths (scenario.placement=aws). Every run summary
embeds the fully resolved config; feeding a summary file back to `run`
reproduces the run byte-identically.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .control import MpcConfig
from .plant import PlantParams
from .scenarios import ScenarioConfig

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "EDGEBEAM_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    plant: PlantParams = field(default_factory=PlantParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    profiles: str = "paper-default"
    seeds: list[int] = field(default_factory=lambda: [1])
    output_dir: str = ""
    figures: bool = True

    def __post_init__(self):
        if not self.output_dir:
            self.output_dir = os.environ.get(OUTPUT_DIR_ENV, "out")

    def resolved(self) -> dict[str, Any]:
        def clean(obj):
            d = dataclasses.asdict(obj)
            return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}

        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": clean(self.scenario),
            "plant": clean(self.plant),
            "mpc": clean(self.mpc),
            "profiles": self.profiles,
            "seeds": list(self.seeds),
            "output_dir": str(self.output_dir),
            "figures": self.figures,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> list[str]:
        problems = self.scenario.validate(self.plant)
        if self.scenario.placement == "all" and self.scenario.kind != "constrained":
            problems.append("placement 'all' is only meaningful for the constrained scenario")
        if self.mpc.u_min >= self.mpc.u_max:
            problems.append(f"mpc.u_min {self.mpc.u_min} must be < mpc.u_max {self.mpc.u_max}")
        if not self.seeds:
            problems.append("seeds list is empty")
        if self.profiles != "paper-default" and not Path(self.profiles).exists():
            problems.append(f"profile table {self.profiles!r} does not exist")
        try:
            from .control import MpcController  # conditioning check, no simulation
            MpcController(self.mpc, self.plant)
        except Exception as exc:
            problems.append(f"mpc configuration rejected: {exc}")
        return problems


def _build(cls, section: str, data: dict[str, Any], skip: tuple[str, ...] = ()):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key in skip:
            continue
        if key not in fields:
            raise ConfigError(f"{section}: unknown field {key!r} "
                              f"(valid: {', '.join(sorted(fields))})")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _parse_scalar(text: str):
    return yaml.safe_load(text)


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        dotted, _, raw = item.partition("=")
        keys = dotted.strip().split(".")
        cursor = data
        for k in keys[:-1]:
            cursor = cursor.setdefault(k, {})
            if not isinstance(cursor, dict):
                raise ConfigError(f"override {dotted!r} crosses a non-section value")
        cursor[keys[-1]] = _parse_scalar(raw)
    return data


def from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    version = data.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    known = {"scenario", "plant", "mpc", "profiles", "seeds", "output_dir", "figures"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(unknown))}")
    scenario = _build(ScenarioConfig, "scenario", data.get("scenario", {}) or {},
                      skip=("master_seed",))
    plant = _build(PlantParams, "plant", data.get("plant", {}) or {})
    mpc = _build(MpcConfig, "mpc", data.get("mpc", {}) or {})
    seeds = data.get("seeds", [1])
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a list of integers")
    return RunConfig(scenario=scenario, plant=plant, mpc=mpc,
                     profiles=str(data.get("profiles", "paper-default")),
                     seeds=seeds,
                     output_dir=str(data.get("output_dir", "")),
                     figures=bool(data.get("figures", True)))


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> RunConfig:
    """Load a YAML config or a previous run summary (JSON with a
    resolved_config key); None starts from defaults."""
    if path is None:
        data: dict[str, Any] = {}
    else:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {p}: {exc}") from exc
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: malformed config: {exc}") from exc
        if isinstance(loaded, dict) and "resolved_config" in loaded:
            loaded = loaded["resolved_config"]
            if "seed" in loaded and "seeds" not in loaded:
                loaded["seeds"] = [loaded.pop("seed")]
        data = loaded
    if overrides:
        data = apply_overrides(data, overrides)
    return from_dict(data)
