"""Evaluation metrics over an event log, with warm-up/cool-down trimming.

Node and burst buffer usage are time-integrated over the measurement window,
counting boundary jobs by their overlap. Waits and slowdowns cover jobs
submitted inside the window; jobs shorter than the abnormal threshold are
dropped from slowdown averages because they end almost immediately and blow
the ratio up.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .model import SystemConfig
from .simulator import SimEvent

DEFAULT_BUCKETS = {
    "job_size": [(1, 8), (9, 1023), (1024, None)],
    "bb_request": [(0, 0), (1, 102400), (102401, 204800), (204801, None)],
    "runtime": [(0, 3600), (3601, 43200), (43201, None)],
}


@dataclass
class JobRow:
    id: str
    submit: int
    start: int
    end: int
    nodes: int
    bb: int
    wait: int
    runtime: int
    slowdown: float | None  # None for abnormal (too-short) jobs


@dataclass
class MetricsReport:
    node_usage: float
    bb_usage: float
    avg_wait: float
    avg_slowdown: float
    rows: list[JobRow]
    t0: int
    t1: int


def _overlap(a0: int, a1: int, b0: int, b1: int) -> int:
    return max(0, min(a1, b1) - max(a0, b0))


def compute_metrics(log: list[SimEvent], cfg: SystemConfig,
                    trim: tuple[int, int] = (0, 0),
                    abnormal_threshold: int = 60) -> MetricsReport:
    """Aggregate usage, wait and slowdown from a complete event log."""
    if not log:
        raise ValueError("empty event log")
    submits: dict[str, SimEvent] = {}
    starts: dict[str, SimEvent] = {}
    ends: dict[str, SimEvent] = {}
    for e in log:
        if e.kind == "submit":
            submits[e.job_id] = e
        elif e.kind == "job_start":
            starts[e.job_id] = e
        elif e.kind == "job_end":
            ends[e.job_id] = e
    unmatched = set(starts) - set(ends)
    if unmatched:
        raise ValueError(f"log incomplete: jobs {sorted(unmatched)} started but never ended")

    tmin = min(e.time for e in log)
    tmax = max(e.time for e in log)
    t0 = tmin + trim[0]
    t1 = tmax - trim[1]
    if t1 <= t0:
        raise ValueError(f"empty measurement window: [{t0}, {t1}]")
    span = t1 - t0

    node_secs = 0
    bb_secs = 0
    rows: list[JobRow] = []
    for jid, ev in starts.items():
        end = ends[jid]
        node_secs += ev.nodes * _overlap(ev.time, end.time, t0, t1)
        bb_secs += ev.bb * _overlap(ev.time, end.time, t0, t1)
        submit = submits[jid].time if jid in submits else ev.time
        if t0 <= submit <= t1:
            duration = end.time - ev.time
            wait = ev.time - submit
            slowdown = None
            if duration >= abnormal_threshold and duration > 0:
                slowdown = (wait + duration) / duration
            rows.append(JobRow(jid, submit, ev.time, end.time, ev.nodes, ev.bb,
                               wait, duration, slowdown))
    rows.sort(key=lambda r: (r.submit, r.id))

    node_usage = node_secs / (cfg.total_nodes * span) if cfg.total_nodes else 0.0
    bb_usage = bb_secs / (cfg.total_bb * span) if cfg.total_bb else 0.0
    waits = [r.wait for r in rows]
    slows = [r.slowdown for r in rows if r.slowdown is not None]
    return MetricsReport(
        node_usage=node_usage,
        bb_usage=bb_usage,
        avg_wait=sum(waits) / len(waits) if waits else 0.0,
        avg_slowdown=sum(slows) / len(slows) if slows else 0.0,
        rows=rows,
        t0=t0,
        t1=t1,
    )


@dataclass
class BucketRow:
    label: str
    count: int
    avg_wait: float | None
    avg_slowdown: float | None


def bucketize(report: MetricsReport, dimension: str,
              buckets: list[tuple[int, int | None]] | None = None) -> list[BucketRow]:
    """Per-bucket average wait/slowdown along one job dimension.

    Buckets are inclusive (lo, hi) ranges; hi of None means unbounded. Empty
    buckets report count 0 and None averages.
    """
    getters = {
        "job_size": lambda r: r.nodes,
        "bb_request": lambda r: r.bb,
        "runtime": lambda r: r.runtime,
    }
    if dimension not in getters:
        raise ValueError(f"unknown bucket dimension {dimension!r}")
    get = getters[dimension]
    edges = buckets if buckets is not None else DEFAULT_BUCKETS[dimension]
    out = []
    for lo, hi in edges:
        members = [r for r in report.rows if lo <= get(r) and (hi is None or get(r) <= hi)]
        label = f"{lo}+" if hi is None else f"{lo}-{hi}"
        slows = [r.slowdown for r in members if r.slowdown is not None]
        out.append(BucketRow(
            label=label,
            count=len(members),
            avg_wait=sum(r.wait for r in members) / len(members) if members else None,
            avg_slowdown=sum(slows) / len(slows) if slows else None,
        ))
    return out


COMPARISON_COLUMNS = ("node_usage", "bb_usage", "inv_avg_wait", "inv_avg_slowdown")


def _metric_columns(report: MetricsReport) -> tuple[float, float, float, float]:
    # reciprocals so that bigger is better in every column
    return (
        report.node_usage,
        report.bb_usage,
        1.0 / max(report.avg_wait, 1e-9),
        1.0 / max(report.avg_slowdown, 1e-9),
    )


def emit_comparison(reports: list[tuple[str, MetricsReport]], normalize: bool = False) -> bytes:
    """CSV comparing policies; optional min-max scaling maps best to 1, worst to 0."""
    if not reports:
        raise ValueError("need at least one report")
    table = [_metric_columns(r) for _, r in reports]
    if normalize:
        cols = list(zip(*table))
        scaled = []
        for col in cols:
            lo, hi = min(col), max(col)
            if math.isclose(lo, hi):
                scaled.append([1.0] * len(col))
            else:
                scaled.append([(v - lo) / (hi - lo) for v in col])
        table = list(zip(*scaled))
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(("policy",) + COMPARISON_COLUMNS)
    for (name, _), row in zip(reports, table):
        writer.writerow([name] + [f"{v:.6g}" for v in row])
    return buf.getvalue().encode("utf-8")


def write_jobs_csv(report: MetricsReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("id", "submit", "start", "end", "nodes", "bb", "wait",
                         "runtime", "slowdown"))
        for r in report.rows:
            writer.writerow((r.id, r.submit, r.start, r.end, r.nodes, r.bb, r.wait,
                             r.runtime, "" if r.slowdown is None else f"{r.slowdown:.6g}"))


def write_metrics_csv(report: MetricsReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("node_usage", "bb_usage", "avg_wait", "avg_slowdown", "t0", "t1"))
        writer.writerow((f"{report.node_usage:.6g}", f"{report.bb_usage:.6g}",
                         f"{report.avg_wait:.6g}", f"{report.avg_slowdown:.6g}",
                         report.t0, report.t1))
