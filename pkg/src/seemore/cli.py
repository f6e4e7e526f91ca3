"""Scenario runner.

Single run::

    seemore --scenario scenario.json --out results/run.csv

Sweep over a grid of cluster shapes, modes and client counts::

    seemore --sweep grid.json --out results/sweep.csv

Exit codes: 0 when every run finished with a clean safety audit, 1 on a
configuration or IO error, 2 when the auditor reports a safety violation.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import statistics
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, Mode
from .metrics import RunMetrics, emit_csv
from .simnet import ClusterSpec, RunResult, ScenarioConfig, ScenarioInvalid, run

log = logging.getLogger("seemore")

EXIT_OK, EXIT_CONFIG, EXIT_UNSAFE = 0, 1, 2

SWEEP_COLUMNS = (
    "c", "m", "S", "P", "mode", "clients", "seed", "requests", "completed", "messages",
    "messages_per_request", "mean_latency", "p50_latency", "p99_latency", "throughput",
    "view_changes", "max_downtime", "violations",
)


class CellFailure(RuntimeError):
    def __init__(self, cell: dict, violations: list[str]):
        super().__init__(f"cell {cell} failed the safety audit")
        self.cell = cell
        self.violations = violations


def load_json(path: str | Path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ScenarioInvalid(f"{path}: top level must be an object")
    return data


def load_scenario(path: str | Path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(load_json(path))


def apply_overrides(scenario: ScenarioConfig, seed: int | None = None, mode: str | None = None) -> ScenarioConfig:
    """Command-line values win over the scenario file."""
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    if mode is not None:
        scenario = replace(scenario, mode=Mode.parse(mode))
    return scenario


def _percentile(values: list[int], q: float) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    # nearest-rank percentile
    rank = max(1, math.ceil(q * len(ordered)))
    return float(ordered[rank - 1])


def summarize(metrics: RunMetrics) -> dict:
    lat = metrics.latencies()
    downtimes = [s.downtime for s in metrics.spans if s.downtime is not None]
    return {
        "completed": metrics.completed,
        "messages": metrics.total_messages,
        "messages_per_request": round(metrics.total_messages / metrics.completed, 3) if metrics.completed else 0.0,
        "mean_latency": round(statistics.fmean(lat), 3) if lat else 0.0,
        "p50_latency": _percentile(lat, 0.50),
        "p99_latency": _percentile(lat, 0.99),
        "throughput": round(metrics.throughput, 6),
        "view_changes": len(metrics.spans),
        "max_downtime": max(downtimes, default=0),
    }


def write_audit_record(result: RunResult, stem: Path) -> Path:
    path = stem.with_name(stem.name + "_audit.tsv")
    path.write_text(result.audit_record())
    return path


def run_scenario(scenario: ScenarioConfig, out: str | None, figures: bool, audit_only: bool) -> int:
    scenario.validate()
    result = run(scenario)
    summary = summarize(result.metrics)
    print(" ".join(f"{k}={v}" for k, v in summary.items()) + f" violations={len(result.violations)}")
    if out:
        target = Path(out)
        if target.suffix != ".csv":
            target = target.with_suffix(".csv")
        target.parent.mkdir(parents=True, exist_ok=True)
        stem = target.with_suffix("")
        write_audit_record(result, stem)
        if not audit_only:
            emit_csv(result.metrics, target)
            if figures:
                from .report import render_run

                render_run(result.metrics, stem)
    if result.violations:
        for line in result.violations:
            print(f"safety violation: {line}", file=sys.stderr)
        return EXIT_UNSAFE
    return EXIT_OK


def _cluster_for(entry) -> ClusterSpec:
    if isinstance(entry, dict):
        return ClusterSpec(**entry)
    c, m = entry
    return ClusterSpec(S=2 * c, c=c, m=m, P=3 * m + 1)


def sweep_cells(base: ScenarioConfig, grid: dict, seeds: list[int]):
    """Yield (cell, scenario) pairs in a fixed order: cluster, mode, clients, seed."""
    clusters = [_cluster_for(e) for e in grid.get("cluster", [])] or [base.cluster]
    modes = [Mode.parse(x) for x in grid.get("mode", [])] or [base.mode]
    client_counts = list(grid.get("clients", [])) or [base.workload.clients]
    for cluster, mode, clients, seed in itertools.product(clusters, modes, client_counts, seeds):
        scenario = replace(
            base,
            cluster=cluster,
            mode=mode,
            workload=replace(base.workload, clients=clients),
            seed=seed,
        )
        cfg = scenario.validate()
        cell = {"c": cfg.c, "m": cfg.m, "S": cfg.S, "P": cfg.P, "mode": mode.label, "clients": clients, "seed": seed}
        yield cell, scenario


def run_sweep(base: ScenarioConfig, grid: dict, seeds: list[int]) -> list[dict]:
    """One summary row per (cell, seed); raises CellFailure on the first unsafe cell."""
    rows = []
    for cell, scenario in sweep_cells(base, grid, seeds):
        result = run(scenario)
        if result.violations:
            raise CellFailure(cell, result.violations)
        row = dict(cell)
        row["requests"] = scenario.workload.clients * scenario.workload.requests_per_client
        row.update(summarize(result.metrics))
        row["violations"] = 0
        rows.append(row)
        log.info("cell %s done", cell)
    return rows


def write_sweep_csv(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != ".csv":
        path = path.with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        out.writeheader()
        for row in rows:
            out.writerow(row)
    return path


def _seeds(value) -> list[int]:
    if isinstance(value, int):
        return list(range(value))
    return [int(s) for s in value]


def sweep_command(args) -> int:
    spec = load_json(args.sweep)
    if args.scenario:
        base = load_scenario(args.scenario)
    elif "base" in spec:
        base = ScenarioConfig.from_dict(spec["base"])
    else:
        raise ScenarioInvalid("sweep needs a base scenario (--scenario or a 'base' entry)")
    grid = dict(spec.get("grid") or {})
    seeds = [args.seed] if args.seed is not None else _seeds(spec.get("seeds", 1))
    if args.mode is not None:
        grid["mode"] = [args.mode]
    try:
        rows = run_sweep(base, grid, seeds)
    except CellFailure as exc:
        print(str(exc), file=sys.stderr)
        for line in exc.violations:
            print(f"safety violation: {line}", file=sys.stderr)
        return EXIT_UNSAFE
    print(f"cells={len(rows)} violations=0")
    if args.out and not args.audit_only:
        path = write_sweep_csv(rows, args.out)
        if not args.no_figures:
            from .report import render_sweep

            render_sweep(rows, path.with_suffix(""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seemore", description="Run seeded replication scenarios and audit them.")
    parser.add_argument("--scenario", metavar="PATH", help="scenario file (JSON)")
    parser.add_argument("--sweep", metavar="PATH", help="sweep grid file (JSON)")
    parser.add_argument("--seed", type=int, help="seed, overrides the file value")
    parser.add_argument("--mode", choices=[m.label for m in Mode], help="initial mode, overrides the file value")
    parser.add_argument("--out", metavar="PATH", help="CSV output path; figures share its stem")
    parser.add_argument("--audit-only", action="store_true", help="run and audit without writing metrics")
    parser.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if not args.scenario and not args.sweep:
        parser.print_usage(sys.stderr)
        print("error: one of --scenario or --sweep is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.sweep:
            return sweep_command(args)
        scenario = apply_overrides(load_scenario(args.scenario), args.seed, args.mode)
        return run_scenario(scenario, args.out, not args.no_figures, args.audit_only)
    except (ConfigError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
