"""Experiment driver: config parsing, batch simulation runs, synthesis, benchmarks.

A YAML config fully determines an experiment; it is validated before any run
starts and every artifact is reproducible from config plus seeds. Output
layout: one directory per (policy, seed) holding events.log, metrics.csv and
jobs.csv, plus a top-level comparison.csv.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .metrics import MetricsReport, compute_metrics, emit_comparison, write_jobs_csv, write_metrics_csv
from .model import GaParams, SystemConfig, SystemState
from .moo import brute_force_pareto, ga_solve
from .policies import PolicySpec, preset
from .simulator import run_simulation, write_event_log
from .trace import (
    Workload,
    generate_workload,
    load_trace,
    synthesize_bb_workload,
    synthesize_ssd_workload,
    write_trace,
)


class ConfigError(ValueError):
    """Invalid experiment config; message names the offending field."""


@dataclass
class ExperimentConfig:
    system: SystemConfig
    workload: Workload
    policies: list[PolicySpec]
    seeds: list[int]
    trim: tuple[int, int]
    abnormal_threshold: int
    output_dir: str
    normalize: bool


def _require(mapping, key, section):
    if key not in mapping:
        raise ConfigError(f"missing field {section}.{key}")
    return mapping[key]


def _parse_node_ssd(raw, nodes):
    if raw is None:
        return None
    if isinstance(raw, list):
        return tuple(int(v) for v in raw)
    if isinstance(raw, dict):
        layout = []
        for cap in sorted(raw, key=int):
            layout.extend([int(cap)] * int(raw[cap]))
        return tuple(layout)
    raise ConfigError("system.node_ssd must be null, a list, or a {capacity: count} map")


def _parse_policy(entry, extension):
    if not isinstance(entry, dict):
        raise ConfigError(f"policies entries must be mappings, got {entry!r}")
    if "preset" in entry:
        try:
            return preset(entry["preset"], extension=extension)
        except ValueError as exc:
            raise ConfigError(f"policies.preset: {exc}")
    target = entry.get("target")
    if isinstance(target, str):
        names = {"nodes": 0, "bb": 1, "ssd": 2}
        if target not in names:
            raise ConfigError(f"policies.target must be nodes, bb, ssd or an index, got {target!r}")
        target = names[target]
    spec = PolicySpec(
        kind=entry.get("kind", ""),
        weights=tuple(entry["weights"]) if "weights" in entry else None,
        target=target,
        tradeoff_multiplier=entry.get("tradeoff_multiplier"),
        name=entry.get("name"),
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"policies: {exc}")
    return spec


def _build_workload(section) -> Workload:
    if not isinstance(section, dict):
        raise ConfigError("workload must be a mapping")
    if "trace" in section:
        path = section["trace"]
        if not Path(path).exists():
            raise ConfigError(f"workload.trace: no such file {path!r}")
        wl = load_trace(path)
    elif "generate" in section:
        gen = dict(section["generate"])
        try:
            wl = generate_workload(
                n_jobs=int(_require(gen, "jobs", "workload.generate")),
                seed=int(gen.get("seed", 0)),
                submit_span=int(gen.get("submit_span", 86400)),
                nodes_range=tuple(gen.get("nodes_range", (1, 64))),
                runtime_range=tuple(gen.get("runtime_range", (600, 14400))),
                bb_fraction=float(gen.get("bb_fraction", 0.0)),
                bb_range=tuple(gen.get("bb_range", (1024, 65536))),
                estimate_slack=float(gen.get("estimate_slack", 1.5)),
            )
        except ValueError as exc:
            raise ConfigError(f"workload.generate: {exc}")
    else:
        raise ConfigError("workload needs either 'trace' or 'generate'")
    if "synthesize_bb" in section:
        syn = section["synthesize_bb"]
        try:
            wl = synthesize_bb_workload(
                wl,
                target_fraction=float(_require(syn, "fraction", "workload.synthesize_bb")),
                threshold_gb=int(_require(syn, "threshold_gb", "workload.synthesize_bb")),
                seed=int(syn.get("seed", 0)),
            )
        except ValueError as exc:
            raise ConfigError(f"workload.synthesize_bb: {exc}")
    if "synthesize_ssd" in section:
        syn = section["synthesize_ssd"]
        try:
            wl = synthesize_ssd_workload(
                wl,
                low_fraction=float(_require(syn, "low_fraction", "workload.synthesize_ssd")),
                seed=int(syn.get("seed", 0)),
            )
        except ValueError as exc:
            raise ConfigError(f"workload.synthesize_ssd: {exc}")
    return wl


def load_config(path: str) -> ExperimentConfig:
    """Parse and fully validate an experiment config; fail fast on any problem."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")

    system = _require(raw, "system", "config")
    nodes = int(_require(system, "nodes", "system"))
    bb = int(_require(system, "bb_gb", "system"))
    reserved = int(system.get("bb_reserved_gb", 0))
    if reserved < 0 or reserved > bb:
        raise ConfigError("system.bb_reserved_gb must be in [0, bb_gb]")
    ga_raw = raw.get("ga", {})
    cfg = SystemConfig(
        total_nodes=nodes,
        total_bb=bb - reserved,  # persistent reservations are a flat capacity cut
        node_ssd_capacity=_parse_node_ssd(system.get("node_ssd"), nodes),
        window_size=int(raw.get("window", 20)),
        starvation_bound=int(raw.get("starvation_bound", 50)),
        base_scheduler=str(raw.get("base_scheduler", "fcfs")),
        backfill=bool(raw.get("backfill", True)),
        ga=GaParams(
            generations=int(ga_raw.get("generations", 500)),
            population=int(ga_raw.get("population", 20)),
            mutation_prob=float(ga_raw.get("mutation_prob", 0.0005)),
            seed=int(ga_raw.get("seed", 0)),
        ),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"system: {exc}")

    workload = _build_workload(_require(raw, "workload", "config"))

    raw_policies = _require(raw, "policies", "config")
    if not isinstance(raw_policies, list) or not raw_policies:
        raise ConfigError("policies must be a non-empty list")
    policies = [_parse_policy(p, cfg.extension) for p in raw_policies]
    labels = [p.label for p in policies]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"policy labels must be unique, got {labels}")

    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds must be a non-empty list")
    trim_raw = raw.get("trim", {})
    trim = (int(trim_raw.get("warmup", 0)), int(trim_raw.get("cooldown", 0)))

    return ExperimentConfig(
        system=cfg,
        workload=workload,
        policies=policies,
        seeds=[int(s) for s in seeds],
        trim=trim,
        abnormal_threshold=int(raw.get("abnormal_threshold", 60)),
        output_dir=str(raw.get("output", "out")),
        normalize=bool(raw.get("normalize", False)),
    )


def _run_one(task):
    cfg, workload, spec, seed, run_dir, trim, threshold = task
    params = replace(cfg.ga, seed=seed)
    events = run_simulation(workload, cfg, spec, params)
    report = compute_metrics(events, cfg, trim=trim, abnormal_threshold=threshold)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_event_log(events, run_dir / "events.log")
    write_metrics_csv(report, run_dir / "metrics.csv")
    write_jobs_csv(report, run_dir / "jobs.csv")
    return report


def run_experiment(config: ExperimentConfig, out_dir: str | None = None, jobs: int = 1) -> int:
    """Run every (policy, seed) pair; returns a process exit code (0 or 2)."""
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for spec in config.policies:
        for seed in config.seeds:
            run_dir = out / f"{spec.label}_s{seed}"
            tasks.append((config.system, config.workload, spec, seed, str(run_dir),
                          config.trim, config.abnormal_threshold))

    results: list[MetricsReport | None] = [None] * len(tasks)
    failures = []
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_one, t): i for i, t in enumerate(tasks)}
            for fut in concurrent.futures.as_completed(futures):
                i = futures[fut]
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    failures.append((tasks[i][2].label, tasks[i][3], exc))
    else:
        for i, t in enumerate(tasks):
            try:
                results[i] = _run_one(t)
            except Exception as exc:
                failures.append((t[2].label, t[3], exc))

    named: list[tuple[str, MetricsReport]] = []
    by_policy: dict[str, list[MetricsReport]] = {}
    for t, rep in zip(tasks, results):
        if rep is None:
            continue
        label, seed = t[2].label, t[3]
        named.append((f"{label}[{seed}]", rep))
        by_policy.setdefault(label, []).append(rep)
    for label, reps in by_policy.items():
        mean = MetricsReport(
            node_usage=sum(r.node_usage for r in reps) / len(reps),
            bb_usage=sum(r.bb_usage for r in reps) / len(reps),
            avg_wait=sum(r.avg_wait for r in reps) / len(reps),
            avg_slowdown=sum(r.avg_slowdown for r in reps) / len(reps),
            rows=[], t0=0, t1=0,
        )
        named.append((f"{label}/mean", mean))
    if named:
        (out / "comparison.csv").write_bytes(emit_comparison(named, normalize=config.normalize))

    for label, seed, exc in failures:
        print(f"run {label}[{seed}] failed: {exc}", file=sys.stderr)
    return 2 if failures else 0


def bench_solver(window_sizes: list[int], params_list: list[GaParams],
                 repeats: int = 3, seed: int = 123,
                 include_bruteforce: bool = True) -> list[dict]:
    """Time ga_solve (and the exact oracle where tractable) on random windows."""
    cfg = SystemConfig(total_nodes=1000, total_bb=1024000)
    state = SystemState.fresh(cfg)
    rng = np.random.default_rng(seed)
    rows = []
    for w in window_sizes:
        windows = []
        for _ in range(repeats):
            windows.append(_random_window(rng, w, cfg))
        for params in params_list:
            elapsed = []
            for window in windows:
                t0 = time.perf_counter()
                ga_solve(window, state, cfg, params)
                elapsed.append(time.perf_counter() - t0)
            rows.append({
                "w": w,
                "generations": params.generations,
                "population": params.population,
                "ga_seconds": sum(elapsed) / len(elapsed),
            })
        if include_bruteforce and w <= 25:
            elapsed = []
            for window in windows:
                t0 = time.perf_counter()
                brute_force_pareto(window, state, cfg)
                elapsed.append(time.perf_counter() - t0)
            rows[-1]["bf_seconds"] = sum(elapsed) / len(elapsed)
    return rows


def _random_window(rng, w, cfg):
    from .model import Job

    return [
        Job(
            id=f"w{i}",
            submit_time=0,
            nodes_requested=int(rng.integers(1, cfg.total_nodes + 1)),
            walltime_estimate=3600,
            runtime=3600,
            bb_request=int(rng.integers(0, cfg.total_bb + 1)),
        )
        for i in range(w)
    ]


def _cmd_simulate(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    return run_experiment(config, out_dir=args.out, jobs=args.jobs)


def _cmd_synthesize(args) -> int:
    try:
        wl = load_trace(args.input)
        if args.mode == "bb":
            wl = synthesize_bb_workload(wl, args.fraction, args.threshold_gb, args.seed)
        else:
            wl = synthesize_ssd_workload(wl, args.fraction, args.seed)
        write_trace(wl, args.out)
    except (OSError, ValueError) as exc:
        print(f"synthesize error: {exc}", file=sys.stderr)
        return 1
    return 0


def _cmd_bench(args) -> int:
    sizes = [int(v) for v in args.window.split(",") if v]
    gens = [int(v) for v in args.generations.split(",") if v]
    params = [GaParams(generations=g, population=args.population, seed=0) for g in gens]
    rows = bench_solver(sizes, params, repeats=args.repeats,
                        include_bruteforce=not args.no_bruteforce)
    print("w,generations,population,ga_seconds,bf_seconds")
    for r in rows:
        bf = f"{r['bf_seconds']:.6f}" if "bf_seconds" in r else ""
        print(f"{r['w']},{r['generations']},{r['population']},{r['ga_seconds']:.6f},{bf}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mrsched",
                                     description="Multi-resource batch scheduling simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the experiment described by a config file")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", help="override the config's output directory")
    sim.add_argument("--jobs", type=int, default=1, help="parallel runs")
    sim.set_defaults(func=_cmd_simulate)

    syn = sub.add_parser("synthesize", help="derive a stressed workload from a trace")
    syn.add_argument("--in", dest="input", required=True)
    syn.add_argument("--mode", choices=("bb", "ssd"), required=True)
    syn.add_argument("--fraction", type=float, required=True,
                     help="bb: target fraction of jobs with requests; ssd: low-demand fraction")
    syn.add_argument("--threshold-gb", type=int, default=5120)
    syn.add_argument("--seed", type=int, required=True)
    syn.add_argument("--out", required=True)
    syn.set_defaults(func=_cmd_synthesize)

    ben = sub.add_parser("bench", help="time the solver across window sizes")
    ben.add_argument("--window", default="20")
    ben.add_argument("--generations", default="500")
    ben.add_argument("--population", type=int, default=20)
    ben.add_argument("--repeats", type=int, default=3)
    ben.add_argument("--no-bruteforce", action="store_true")
    ben.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
