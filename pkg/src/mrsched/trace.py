"""Workload ingestion and synthetic workload generators.

The native trace format is line-delimited records with the fields
(id, submit_time, nodes, walltime_estimate, runtime, bb_request_gb,
ssd_per_node_gb, dependencies), either as JSONL or as CSV with a mandatory
header row. Dependencies are a ``;``-separated id list (empty allowed).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np

from .model import Job

FIELDS = (
    "id",
    "submit_time",
    "nodes",
    "walltime_estimate",
    "runtime",
    "bb_request_gb",
    "ssd_per_node_gb",
    "dependencies",
)

_INT_FIELDS = FIELDS[1:7]


class TraceError(ValueError):
    """Malformed trace input; message names the offending line and field."""


@dataclass
class Workload:
    """A time-ordered job list plus provenance metadata."""

    jobs: list[Job]
    metadata: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        seen: set[str] = set()
        prev = None
        for job in self.jobs:
            job.validate()
            if job.id in seen:
                raise TraceError(f"duplicate job id {job.id!r}")
            seen.add(job.id)
            if prev is not None and job.submit_time < prev:
                raise TraceError(f"job {job.id!r} breaks submit-time ordering")
            prev = job.submit_time
        for job in self.jobs:
            for dep in job.dependencies:
                if dep not in seen:
                    raise TraceError(f"job {job.id!r} depends on unknown id {dep!r}")
        _check_acyclic(self.jobs)

    def bb_fraction(self) -> float:
        if not self.jobs:
            return 0.0
        return sum(1 for j in self.jobs if j.bb_request > 0) / len(self.jobs)


def _check_acyclic(jobs: list[Job]) -> None:
    deps = {j.id: j.dependencies for j in jobs}
    state: dict[str, int] = {}  # 0 in progress, 1 done

    def visit(root: str) -> None:
        stack = [(root, iter(deps[root]))]
        state[root] = 0
        while stack:
            node, it = stack[-1]
            for child in it:
                if state.get(child) == 0:
                    raise TraceError(f"dependency cycle through {child!r}")
                if child not in state:
                    state[child] = 0
                    stack.append((child, iter(deps[child])))
                    break
            else:
                state[node] = 1
                stack.pop()

    for jid in deps:
        if jid not in state:
            visit(jid)


def _job_from_record(record: dict[str, Any], lineno: int) -> Job:
    for name in FIELDS[:7]:
        if name not in record or record[name] in (None, ""):
            if name in ("bb_request_gb", "ssd_per_node_gb"):
                record[name] = 0
            else:
                raise TraceError(f"line {lineno}: missing field {name!r}")
    values: dict[str, int] = {}
    for name in _INT_FIELDS:
        try:
            values[name] = int(record[name])
        except (TypeError, ValueError):
            raise TraceError(f"line {lineno}: field {name!r} is not an integer: {record[name]!r}")
    for name in ("nodes", "bb_request_gb", "ssd_per_node_gb", "submit_time", "runtime"):
        if values[name] < 0:
            raise TraceError(f"line {lineno}: field {name!r} is negative")
    deps_raw = record.get("dependencies") or ""
    if isinstance(deps_raw, str):
        deps = [d for d in deps_raw.split(";") if d]
    elif isinstance(deps_raw, (list, tuple)):
        deps = [str(d) for d in deps_raw]
    else:
        raise TraceError(f"line {lineno}: field 'dependencies' must be a ;-list or array")
    job = Job(
        id=str(record["id"]),
        submit_time=values["submit_time"],
        nodes_requested=values["nodes"],
        walltime_estimate=values["walltime_estimate"],
        runtime=values["runtime"],
        bb_request=values["bb_request_gb"],
        ssd_per_node=values["ssd_per_node_gb"],
        dependencies=deps,
    )
    try:
        job.validate()
    except ValueError as exc:
        raise TraceError(f"line {lineno}: {exc}")
    return job


def parse_trace(stream, format: str = "native-jsonl") -> Workload:
    """Parse a byte or text stream into a Workload, sorted by submit time."""
    if isinstance(stream, bytes):
        stream = io.BytesIO(stream)
    if hasattr(stream, "read"):
        data = stream.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
    else:
        data = str(stream)

    jobs: list[Job] = []
    if format == "native-jsonl":
        for lineno, line in enumerate(data.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {lineno}: invalid JSON ({exc.msg})")
            if not isinstance(record, dict):
                raise TraceError(f"line {lineno}: record is not an object")
            jobs.append(_job_from_record(record, lineno))
    elif format == "csv":
        reader = csv.reader(io.StringIO(data))
        header = next(reader, None)
        if header is None:
            header = []
        header = [h.strip() for h in header]
        missing = [f for f in FIELDS if f not in header]
        if missing:
            if data.strip() == "":
                return Workload(jobs=[], metadata={"source": "csv"})
            raise TraceError(f"line 1: CSV header missing columns {missing}")
        idx = {name: header.index(name) for name in FIELDS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise TraceError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            record = {name: row[idx[name]].strip() for name in FIELDS}
            jobs.append(_job_from_record(record, lineno))
    else:
        raise TraceError(f"unknown trace format {format!r}")

    jobs.sort(key=lambda j: j.submit_time)  # stable: ties keep input order
    wl = Workload(jobs=jobs, metadata={"source": format})
    wl.validate()
    return wl


def load_trace(path: str) -> Workload:
    fmt = "csv" if str(path).endswith(".csv") else "native-jsonl"
    with open(path, "rb") as fh:
        return parse_trace(fh, fmt)


def job_to_record(job: Job) -> dict[str, Any]:
    return {
        "id": job.id,
        "submit_time": job.submit_time,
        "nodes": job.nodes_requested,
        "walltime_estimate": job.walltime_estimate,
        "runtime": job.runtime,
        "bb_request_gb": job.bb_request,
        "ssd_per_node_gb": job.ssd_per_node,
        "dependencies": ";".join(job.dependencies),
    }


def write_trace(workload: Workload, path: str, format: str | None = None) -> None:
    fmt = format or ("csv" if str(path).endswith(".csv") else "native-jsonl")
    with open(path, "w", newline="") as fh:
        if fmt == "native-jsonl":
            for job in workload.jobs:
                fh.write(json.dumps(job_to_record(job)) + "\n")
        elif fmt == "csv":
            writer = csv.writer(fh)
            writer.writerow(FIELDS)
            for job in workload.jobs:
                rec = job_to_record(job)
                writer.writerow([rec[f] for f in FIELDS])
        else:
            raise TraceError(f"unknown trace format {fmt!r}")


def synthesize_bb_workload(
    base: Workload, target_fraction: float, threshold_gb: int, seed: int
) -> Workload:
    """Raise the fraction of burst-buffer-requesting jobs to target_fraction.

    New requests are drawn (with replacement) from the base requests strictly
    greater than threshold_gb; recipients are sampled without replacement
    among jobs that request no burst buffer. Existing requests are kept.
    """
    if not 0.0 <= target_fraction <= 1.0:
        raise ValueError("target_fraction must be in [0, 1]")
    donors = [j.bb_request for j in base.jobs if j.bb_request > threshold_gb]
    if not donors:
        raise ValueError(f"no base request exceeds {threshold_gb} GB; donor pool is empty")

    n = len(base.jobs)
    have = sum(1 for j in base.jobs if j.bb_request > 0)
    want = math.floor(target_fraction * n + 0.5)
    if want < have:
        raise ValueError(
            f"target fraction {target_fraction} is below the base fraction "
            f"{have / n:.4f}; requests are never removed"
        )

    rng = np.random.default_rng(seed)
    zero_idx = [i for i, j in enumerate(base.jobs) if j.bb_request == 0]
    picked = rng.choice(len(zero_idx), size=want - have, replace=False) if want > have else []
    recipients = {zero_idx[int(i)] for i in picked}

    jobs = []
    for i, job in enumerate(base.jobs):
        if i in recipients:
            value = donors[int(rng.integers(0, len(donors)))]
            jobs.append(replace(job, bb_request=value))
        else:
            jobs.append(replace(job))
    meta = dict(base.metadata)
    meta.update(synthesis="bb", target_fraction=target_fraction, threshold_gb=threshold_gb, seed=seed)
    return Workload(jobs=jobs, metadata=meta)


def synthesize_ssd_workload(base: Workload, low_fraction: float, seed: int) -> Workload:
    """Overwrite per-node SSD demand: low_fraction of jobs get 0-128 GB, the rest 129-256 GB."""
    if not 0.0 <= low_fraction <= 1.0:
        raise ValueError("low_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    jobs = []
    for job in base.jobs:
        if rng.random() < low_fraction:
            ssd = int(rng.integers(0, 129))
        else:
            ssd = int(rng.integers(129, 257))
        jobs.append(replace(job, ssd_per_node=ssd))
    meta = dict(base.metadata)
    meta.update(synthesis="ssd", low_fraction=low_fraction, seed=seed)
    return Workload(jobs=jobs, metadata=meta)


def generate_workload(
    n_jobs: int,
    seed: int,
    *,
    submit_span: int = 86400,
    nodes_range: tuple[int, int] = (1, 64),
    runtime_range: tuple[int, int] = (600, 14400),
    bb_fraction: float = 0.0,
    bb_range: tuple[int, int] = (1024, 65536),
    estimate_slack: float = 1.5,
) -> Workload:
    """Generate a random workload; the seed fully determines the output."""
    rng = np.random.default_rng(seed)
    submits = np.sort(rng.integers(0, submit_span + 1, size=n_jobs))
    jobs = []
    for i in range(n_jobs):
        runtime = int(rng.integers(runtime_range[0], runtime_range[1] + 1))
        bb = 0
        if rng.random() < bb_fraction:
            bb = int(rng.integers(bb_range[0], bb_range[1] + 1))
        jobs.append(
            Job(
                id=f"j{i:06d}",
                submit_time=int(submits[i]),
                nodes_requested=int(rng.integers(nodes_range[0], nodes_range[1] + 1)),
                walltime_estimate=max(1, int(runtime * estimate_slack)),
                runtime=runtime,
                bb_request=bb,
            )
        )
    wl = Workload(jobs=jobs, metadata={"source": "generated", "seed": seed})
    wl.validate()
    return wl
