"""Command-line front end.

    edgebeam run [config] [--placement N] [--seed S ...] [--set k=v ...]
    edgebeam validate [config]
    edgebeam calibrate [--profiles PATH] [--samples N]
    edgebeam export-profiles [--profiles PATH] [-o OUT]

Exit codes: 0 success, 2 config error, 3 invariant breach, 4 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .engine import Engine
from .metrics import emit_csv, summarize
from .netmodel import (CAP_ANCHOR_ITERS, CAP_ANCHOR_MS, NODE_NAMES, ProfileSet,
                       load_profile_table, mpc_exec_time)
from .scenarios import RunResult, ScenarioConfig, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_IO = 4

SUMMARY_COLUMNS = ("exec_ms", "latency_ms", "u_sq", "position_m")


def _load_profiles(spec: str) -> ProfileSet:
    return load_profile_table(None if spec == "paper-default" else spec)


def _scenario_for_seed(cfg: RunConfig, seed: int, placement: str) -> ScenarioConfig:
    sc = dataclasses.replace(cfg.scenario, master_seed=seed, placement=placement)
    return sc


def _write_summary(path: Path, cfg: RunConfig, seed: int, placement: str,
                   result: RunResult) -> None:
    resolved = cfg.resolved()
    resolved["seeds"] = [seed]
    resolved["scenario"]["placement"] = placement
    stats = {}
    if result.records:
        for col in SUMMARY_COLUMNS:
            stats[col] = summarize(result.records, col).as_dict()
    summary = {
        "edgebeam_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "placement": placement,
        "resolved_config": resolved,
        "records": len(result.records),
        "ticks": result.ticks_emitted,
        "in_flight_at_end": result.in_flight_at_end,
        "migrations": len([m for m in result.migrations if m.completed_at >= 0]),
        "off_beam_events": result.off_beam_events,
        "solver_failures": result.solver_failures,
        "respawns": result.respawns,
        "token_conservation_ok": result.conservation_ok,
        "box_stats": stats,
    }
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, args.set or [])
        if args.placement:
            cfg.scenario.placement = args.placement
        if args.duration is not None:
            cfg.scenario.duration_s = args.duration
        if args.seed:
            cfg.seeds = args.seed
        if args.output_dir:
            cfg.output_dir = args.output_dir
        if args.no_figures:
            cfg.figures = False
        problems = cfg.validate()
        if problems:
            for p in problems:
                print(f"config error: {p}", file=sys.stderr)
            return EXIT_CONFIG
        profiles = _load_profiles(cfg.profiles)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    placements = ([p for p in ("plant", "edge", "aws")]
                  if cfg.scenario.placement == "all" else [cfg.scenario.placement])
    out_dir = Path(cfg.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"i/o error: cannot create {out_dir}: {exc}", file=sys.stderr)
        return EXIT_IO

    collected: dict[str, dict[str, object]] = {}
    for placement in placements:
        for seed in cfg.seeds:
            sc = _scenario_for_seed(cfg, seed, placement)
            try:
                result = run_scenario(sc, plant_params=cfg.plant, mpc_cfg=cfg.mpc,
                                      profiles=profiles)
            except RuntimeError as exc:
                print(f"invariant breach: {exc}", file=sys.stderr)
                return EXIT_INVARIANT
            except ValueError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            stem = f"{sc.kind}_{placement}_seed{seed}"
            try:
                emit_csv(result.records, out_dir / f"{stem}.csv")
                _write_summary(out_dir / f"{stem}_summary.json", cfg, seed, placement, result)
                if cfg.figures and result.records:
                    from .report import render_timeseries
                    render_timeseries(result.records, out_dir / f"{stem}_timeseries.png",
                                      title=f"{sc.kind} @ {placement}, seed {seed}")
            except OSError as exc:
                print(f"i/o error: {exc}", file=sys.stderr)
                return EXIT_IO
            if result.records:
                collected.setdefault(placement, {})
                collected[placement] = {col: summarize(result.records, col)
                                        for col in ("exec_ms", "latency_ms", "u_sq")}
            n_mig = len([m for m in result.migrations if m.completed_at >= 0])
            print(f"{stem}: {len(result.records)} records, "
                  f"{result.solver_failures} solver failures, "
                  f"{result.off_beam_events} off-beam events"
                  + (f", {n_mig} migrations" if sc.kind == "migration" else ""))

    if cfg.figures and len(collected) > 1:
        from .report import render_box_summary
        try:
            render_box_summary(collected, out_dir / f"{cfg.scenario.kind}_boxes.png",
                               title=f"{cfg.scenario.kind} summary (last seed)")
        except OSError as exc:
            print(f"i/o error: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config, args.set or [])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    problems = cfg.validate()
    if problems:
        for p in problems:
            print(f"violation: {p}")
        return EXIT_CONFIG
    print("config ok")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        profiles = _load_profiles(args.profiles)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    n = args.samples
    engine = Engine(master_seed=args.seed)
    tol = 0.05
    all_ok = True
    print(f"link RTT reproduction ({n} samples, tolerance {tol:.0%}):")
    for name in NODE_NAMES:
        link = profiles.link("plant", name)
        rng = engine.rng_stream(f"calibrate.{name}")
        if link.degenerate:
            ok = link.median == 0.0
            print(f"  plant-{name}: deterministic {link.median} ms "
                  f"{'PASS' if ok else 'FAIL'}")
            all_ok &= ok
            continue
        samples = np.array([link.sample_rtt_ms(rng) for _ in range(n)])
        q1, med, q3 = np.quantile(samples, [0.25, 0.5, 0.75])
        med_err = abs(med / link.median - 1.0)
        iqr_err = abs((q3 - q1) / (link.q3 - link.q1) - 1.0)
        ok = med_err <= tol and iqr_err <= tol
        all_ok &= ok
        print(f"  plant-{name}: median {med:.3f} (target {link.median}, "
              f"{med_err:+.2%}) IQR {q3 - q1:.3f} (target {link.q3 - link.q1:.3f}, "
              f"{iqr_err:+.2%}) {'PASS' if ok else 'FAIL'}")

    print("node compute scales (vs measured execution medians):")
    ref = profiles.nodes["edge"].exec_median
    for name in NODE_NAMES:
        node = profiles.nodes[name]
        target = profiles.exec_stats[name]["median"] / ref
        err = abs(node.compute_scale / target - 1.0)
        ok = err <= 0.01
        all_ok &= ok
        print(f"  {name}: scale {node.compute_scale:.4f} (target {target:.4f}) "
              f"{'PASS' if ok else 'FAIL'}")

    print(f"iteration-cap cost anchors (cap {CAP_ANCHOR_ITERS}):")
    for name in NODE_NAMES:
        node = profiles.nodes[name]
        cap_ms = CAP_ANCHOR_ITERS * node.iter_cost * 1e3
        print(f"  {name}: capped solve ~{cap_ms:.1f} ms")
    edge_ms = CAP_ANCHOR_ITERS * profiles.nodes["edge"].iter_cost * 1e3
    ok = abs(edge_ms - CAP_ANCHOR_MS) < 1e-9
    all_ok &= ok
    print(f"  edge anchor {CAP_ANCHOR_MS} ms: {'PASS' if ok else 'FAIL'}")
    print("calibration " + ("PASS" if all_ok else "FAIL"))
    return EXIT_OK if all_ok else EXIT_CONFIG


def cmd_export_profiles(args) -> int:
    try:
        src = (Path(args.profiles) if args.profiles != "paper-default" else None)
        if src is None:
            from importlib import resources
            text = resources.files("edgebeam").joinpath("data/profiles.csv").read_text()
        else:
            text = src.read_text()
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.output:
        try:
            Path(args.output).write_text(text)
        except OSError as exc:
            print(f"i/o error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgebeam",
                                     description="edge-cloud control-loop simulator")
    parser.add_argument("--version", action="version", version=f"edgebeam {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario per seed, writing CSV/summary/figures")
    run.add_argument("config", nargs="?", default=None, help="YAML config or a run summary JSON")
    run.add_argument("--placement", choices=[*NODE_NAMES, "all"])
    run.add_argument("--seed", type=int, action="append", help="repeatable; overrides seeds list")
    run.add_argument("--duration", type=float, help="seconds")
    run.add_argument("--output-dir")
    run.add_argument("--no-figures", action="store_true")
    run.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="dotted config override, e.g. scenario.setpoint_high=0.25")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check config invariants without simulating")
    val.add_argument("config", nargs="?", default=None)
    val.add_argument("--set", action="append", metavar="KEY=VALUE")
    val.set_defaults(func=cmd_validate)

    cal = sub.add_parser("calibrate", help="sample profiles and check them against targets")
    cal.add_argument("--profiles", default="paper-default")
    cal.add_argument("--samples", type=int, default=10_000)
    cal.add_argument("--seed", type=int, default=0)
    cal.set_defaults(func=cmd_calibrate)

    exp = sub.add_parser("export-profiles", help="emit the active profile table CSV")
    exp.add_argument("--profiles", default="paper-default")
    exp.add_argument("-o", "--output")
    exp.set_defaults(func=cmd_export_profiles)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
