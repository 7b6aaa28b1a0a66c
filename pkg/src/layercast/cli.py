"""Command-line front end: seeded runs, sweeps, aggregation and replay.

Outputs are plain CSV (one row per run, fixed column set) plus one JSON
report per run carrying the config, the generated overlay and the metrics,
which is everything `replay` needs to reproduce and verify the run.  All
output is deterministic — rerunning the same command yields byte-identical
files.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from layercast.auction import ConvergenceError
from layercast.config import (ConfigError, ScenarioConfig, parse_config,
                              parse_seed_spec, parse_sweep_spec)
from layercast.metrics import MetricsReport, build_report
from layercast.overlay import generate_overlay
from layercast.simulation import BASELINE, PROPOSED, run_baseline, run_scenario

log = logging.getLogger("layercast")

CSV_COLUMNS = [
    "seed", "mode", "n_upstream", "n_downstream", "degree",
    "upload_lo", "upload_hi",
    "delivery_ratio_0", "delivery_ratio_1", "delivery_ratio_2",
    "delivery_ratio_3", "delivery_ratio_4", "delivery_ratio_5",
    "useless_ratio", "cost_all", "cost_q1", "cost_q2", "cost_q3",
    "max_rounds", "total_rounds",
]

MODES = (PROPOSED, BASELINE)


def _setup_logging() -> None:
    level_name = os.environ.get("LAYERCAST_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return format(value, ".12g")


def csv_row(seed: int, mode: str, config: ScenarioConfig,
            report: MetricsReport) -> dict[str, str]:
    row = {
        "seed": str(seed),
        "mode": mode,
        "n_upstream": str(config.n_upstream),
        "n_downstream": str(config.n_downstream),
        "degree": str(config.degree),
        "upload_lo": _fmt(config.upload_range[0]),
        "upload_hi": _fmt(config.upload_range[1]),
        "useless_ratio": _fmt(report.useless_chunk_ratio),
        "cost_all": _fmt(report.cost_overall),
        "cost_q1": _fmt(report.cost_by_class.get(1)),
        "cost_q2": _fmt(report.cost_by_class.get(2)),
        "cost_q3": _fmt(report.cost_by_class.get(3)),
        "max_rounds": str(report.convergence["max_rounds"]),
        "total_rounds": str(report.convergence["total_rounds"]),
    }
    for k in range(6):
        ratios = report.delivery_ratios
        row[f"delivery_ratio_{k}"] = _fmt(ratios[k]) if k < len(ratios) else ""
    return row


def _run_name(seed: int, mode: str, sweep: tuple[str, float] | None) -> str:
    if sweep is None:
        return f"run_seed{seed}_{mode}"
    key, value = sweep
    return f"run_seed{seed}_{key}{format(value, 'g')}_{mode}"


def _execute(config: ScenarioConfig, seed: int, mode: str,
             trace_path: Path | None):
    overlay = generate_overlay(config, seed)
    trace_fn = None
    sink = None
    if trace_path is not None:
        sink = trace_path.open("w")

        def trace_fn(event: dict) -> None:
            sink.write(json.dumps(event, sort_keys=True) + "\n")

    try:
        runner = run_scenario if mode == PROPOSED else run_baseline
        result = runner(overlay, trace=trace_fn)
    finally:
        if sink is not None:
            sink.close()
    return overlay, result, build_report(result)


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = parse_config(args.config) if args.config else ScenarioConfig()
        config.validate()
        seeds = parse_seed_spec(args.seeds)
        modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        for m in modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode '{m}' (choose from {MODES})")
        sweep_key, sweep_values = (None, [None])
        if args.sweep:
            sweep_key, sweep_values = parse_sweep_spec(args.sweep)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in seeds:
        for value in sweep_values:
            run_config = config if value is None else config.apply_sweep(sweep_key, value)
            sweep = None if value is None else (sweep_key, value)
            for mode in modes:
                name = _run_name(seed, mode, sweep)
                trace_path = out_dir / f"{name}_trace.jsonl" if args.trace else None
                try:
                    overlay, result, report = _execute(run_config, seed, mode,
                                                       trace_path)
                except ConvergenceError as exc:
                    print(f"run {name} did not converge: {exc}", file=sys.stderr)
                    return 3
                except ConfigError as exc:
                    print(f"run {name}: config error: {exc}", file=sys.stderr)
                    return 2
                rows.append(csv_row(seed, mode, run_config, report))
                payload = {
                    "config": run_config.to_dict(),
                    "seed": seed,
                    "mode": mode,
                    "sweep": None if sweep is None else
                             {"key": sweep[0], "value": sweep[1]},
                    "overlay": overlay.to_json_dict(),
                    "metrics": report.to_json_dict(),
                }
                (out_dir / f"{name}.json").write_text(
                    json.dumps(payload, sort_keys=True, indent=2) + "\n")
                log.info("finished %s", name)

    csv_path = out_dir / "results.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    _print_summary(rows)
    print(f"{len(rows)} runs -> {csv_path}")
    return 0


def _mean_of(rows: list[dict[str, str]], column: str) -> str:
    values = [float(r[column]) for r in rows if r[column] != ""]
    if not values:
        return "-"
    return format(sum(values) / len(values), ".4g")


def _print_summary(rows: list[dict[str, str]]) -> None:
    print(f"{'mode':<10} {'runs':>5} {'delivery_0':>11} {'useless':>9} "
          f"{'cost_all':>9} {'max_rounds':>11}")
    for mode in sorted({r["mode"] for r in rows}):
        group = [r for r in rows if r["mode"] == mode]
        worst = max(int(r["max_rounds"]) for r in group)
        print(f"{mode:<10} {len(group):>5} {_mean_of(group, 'delivery_ratio_0'):>11} "
              f"{_mean_of(group, 'useless_ratio'):>9} "
              f"{_mean_of(group, 'cost_all'):>9} {worst:>11}")


def cmd_summarize(args: argparse.Namespace) -> int:
    path = Path(args.results)
    if not path.exists():
        print(f"no such file: {path}", file=sys.stderr)
        return 1
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        print("empty results file", file=sys.stderr)
        return 1
    knobs = ["mode", "n_upstream", "n_downstream", "degree", "upload_lo", "upload_hi"]
    metric_cols = [c for c in CSV_COLUMNS if c not in knobs and c != "seed"]
    groups: dict[tuple[str, ...], list[dict[str, str]]] = {}
    for row in rows:
        groups.setdefault(tuple(row[c] for c in knobs), []).append(row)
    header = knobs + ["seeds"] + metric_cols
    print(",".join(header))
    for key in sorted(groups):
        group = groups[key]
        cells = list(key) + [str(len(group))]
        cells += [_mean_of(group, c) for c in metric_cols]
        print(",".join(cells))
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    path = Path(args.report)
    if not path.exists():
        print(f"no such file: {path}", file=sys.stderr)
        return 1
    stored = json.loads(path.read_text())
    from layercast.config import config_from_dict

    config = config_from_dict(stored["config"])
    overlay = generate_overlay(config, stored["seed"])
    if overlay.to_json_dict() != stored["overlay"]:
        print("replay mismatch: regenerated overlay differs", file=sys.stderr)
        return 1
    runner = run_scenario if stored["mode"] == PROPOSED else run_baseline
    report = build_report(runner(overlay))
    if report.to_json_dict() != stored["metrics"]:
        print("replay mismatch: metrics differ", file=sys.stderr)
        return 1
    print(f"replay ok: {path.name} reproduced exactly")
    return 0


def cmd_validate_config(args: argparse.Namespace) -> int:
    try:
        config = parse_config(args.config)
        config.validate()
    except ConfigError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 1
    print("config ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layercast",
        description="Auction-based bandwidth allocation simulator for "
                    "layered peer-to-peer streaming.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute seeded scenario runs")
    run_p.add_argument("--config", help="JSON config file (defaults if omitted)")
    run_p.add_argument("--seeds", default="1", help="seed or range, e.g. 7 or 1..20")
    run_p.add_argument("--modes", default="proposed",
                       help="comma list of modes: proposed,baseline")
    run_p.add_argument("--sweep", help="sweep axis, e.g. upload_mid=600..1400:200")
    run_p.add_argument("--out", default="results", help="output directory")
    run_p.add_argument("--trace", action="store_true",
                       help="write per-round JSONL auction traces")
    run_p.set_defaults(func=cmd_run)

    sum_p = sub.add_parser("summarize", help="aggregate a results.csv across seeds")
    sum_p.add_argument("results", help="path to results.csv")
    sum_p.set_defaults(func=cmd_summarize)

    rep_p = sub.add_parser("replay", help="re-run a stored run report and verify")
    rep_p.add_argument("report", help="path to a run_*.json report")
    rep_p.set_defaults(func=cmd_replay)

    val_p = sub.add_parser("validate-config", help="check a config file")
    val_p.add_argument("config", help="path to JSON config")
    val_p.set_defaults(func=cmd_validate_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
