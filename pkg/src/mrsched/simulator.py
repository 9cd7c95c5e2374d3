"""Discrete-event replay of a workload through base scheduler, window and policy.

The event loop fires a scheduling pass after every submission and every
completion (and at time 0). Within a timestamp, completions are processed
before submissions, ties broken by job id, so replays are deterministic.
Jobs run for min(runtime, walltime_estimate): overruns are killed at the
estimate, as batch systems do.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .model import GaParams, Job, JobState, SystemConfig, SystemState
from .policies import PolicySpec, _consume_counts, _fits_counts, assign_ssd_nodes, select
from .trace import Workload

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimEvent:
    time: int
    kind: str  # submit | schedule_tick | job_start | job_end
    job_id: str | None = None
    nodes: int | None = None
    bb: int | None = None
    ssd: int | None = None
    node_ids: tuple[int, ...] | None = None

    def to_line(self) -> str:
        def s(v):
            return "" if v is None else str(v)

        nodes = ";".join(str(i) for i in self.node_ids) if self.node_ids else ""
        return f"{self.time},{self.kind},{s(self.job_id)},{s(self.nodes)},{s(self.bb)},{s(self.ssd)},{nodes}"


def format_event_log(events: list[SimEvent]) -> str:
    return "".join(e.to_line() + "\n" for e in events)


def write_event_log(events: list[SimEvent], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(format_event_log(events))


@dataclass
class WindowEntry:
    job: Job
    ticks: int = 0


@dataclass
class WindowState:
    capacity: int
    entries: list[WindowEntry] = field(default_factory=list)

    def jobs(self) -> list[Job]:
        return [e.job for e in self.entries]


def compute_priority(job: Job, now: int, base: str) -> float:
    """Queue priority under the base scheduler; larger means runs earlier."""
    if base == "fcfs":
        return float(-job.submit_time)
    if base == "wfp":
        wait = now - job.submit_time
        return job.nodes_requested * (wait / job.walltime_estimate) ** 3
    raise ValueError(f"unknown base scheduler {base!r}")


def fill_window(queue: list[Job], ws: WindowState, completed: set[str]) -> WindowState:
    """Top the window up from the queue front, skipping jobs with pending dependencies."""
    present = {e.job.id for e in ws.entries}
    for job in queue:
        if len(ws.entries) >= ws.capacity:
            break
        if job.id in present:
            continue
        if all(d in completed for d in job.dependencies):
            job.state = JobState.IN_WINDOW
            ws.entries.append(WindowEntry(job))
            present.add(job.id)
    return ws


def _fits_now(job: Job, state: SystemState, cfg: SystemConfig) -> bool:
    fs, fb = state.free_class_counts()
    return _fits_counts(job, fs, fb, cfg.total_bb - state.bb_used, cfg.extension)


def _choose_nodes(job: Job, state: SystemState, cfg: SystemConfig) -> list[int] | None:
    if cfg.extension:
        return assign_ssd_nodes(job, state)
    free = state.free_node_ids()
    if len(free) < job.nodes_requested:
        return None
    return free[: job.nodes_requested]


def _class_consumption(job: Job, state: SystemState, cfg: SystemConfig) -> tuple[int, int]:
    fs, fb = state.free_class_counts()
    ns, nb = _consume_counts(job, fs, fb, cfg.extension)
    return fs - ns, fb - nb


@dataclass
class Reservation:
    """Earliest estimated start of a blocked job, plus availability at that time."""

    job: Job
    time: int
    avail_small: int
    avail_big: int
    avail_bb: int

    def permits(self, job: Job, d_small: int, d_big: int, cfg: SystemConfig, now: int) -> bool:
        """Would starting ``job`` now still let the reserved job start on time?"""
        if now + job.walltime_estimate <= self.time:
            return True
        return _fits_counts(
            self.job,
            self.avail_small - d_small,
            self.avail_big - d_big,
            self.avail_bb - job.bb_request,
            cfg.extension,
        )

    def commit(self, job: Job, d_small: int, d_big: int, now: int) -> None:
        if now + job.walltime_estimate > self.time:
            self.avail_small -= d_small
            self.avail_big -= d_big
            self.avail_bb -= job.bb_request


def _earliest_fit(job: Job, state: SystemState, cfg: SystemConfig, now: int) -> Reservation | None:
    """Reservation for ``job`` from running jobs' walltime estimates; None if it can never fit."""
    fs, fb = state.free_class_counts()
    bb = cfg.total_bb - state.bb_used
    if _fits_counts(job, fs, fb, bb, cfg.extension):
        return Reservation(job, now, fs, fb, bb)
    releases: dict[int, list[int]] = {}
    for jid in sorted(state.running):
        rj = state.running[jid]
        end = rj.start_time + rj.job.walltime_estimate
        small = sum(1 for i in rj.node_ids if state.node_ssd[i] <= 128)
        rel = releases.setdefault(end, [0, 0, 0])
        rel[0] += small
        rel[1] += len(rj.node_ids) - small
        rel[2] += rj.job.bb_request
    for end in sorted(releases):
        small, big, b = releases[end]
        fs += small
        fb += big
        bb += b
        if _fits_counts(job, fs, fb, bb, cfg.extension):
            return Reservation(job, end, fs, fb, bb)
    return None


def easy_backfill(waiting: list[Job], state: SystemState, cfg: SystemConfig, now: int,
                  head: Job | None = None) -> list[Job]:
    """Start jobs that fit now without delaying the reserved head job.

    ``waiting`` is the priority-ordered list of startable jobs. Without an
    explicit head, leading jobs that fit start outright and the first blocked
    job becomes the reservation head.
    """
    started: list[Job] = []
    rest = list(waiting)
    if head is None:
        while rest:
            job = rest[0]
            if not _fits_now(job, state, cfg):
                break
            state.allocate(job, _choose_nodes(job, state, cfg), now)
            job.state = JobState.RUNNING
            started.append(job)
            rest.pop(0)
        if not rest:
            return started
        head = rest.pop(0)
    else:
        rest = [j for j in rest if j.id != head.id]

    reservation = _earliest_fit(head, state, cfg, now)
    for job in rest:
        if not _fits_now(job, state, cfg):
            continue
        d_small, d_big = _class_consumption(job, state, cfg)
        if reservation is None or reservation.permits(job, d_small, d_big, cfg, now):
            state.allocate(job, _choose_nodes(job, state, cfg), now)
            job.state = JobState.RUNNING
            if reservation is not None:
                reservation.commit(job, d_small, d_big, now)
            started.append(job)
    return started


def schedule_tick(ws: WindowState, queue: list[Job], state: SystemState, cfg: SystemConfig,
                  spec: PolicySpec, now: int, params: GaParams | None = None) -> list[Job]:
    """One scheduling pass: starving jobs, then the policy, then backfilling.

    ``queue`` holds the dependency-eligible waiting jobs beyond the window in
    priority order. Returns every job started at this tick; the caller owns
    event recording and completion scheduling.
    """
    started: list[Job] = []

    def begin(job: Job) -> None:
        node_ids = _choose_nodes(job, state, cfg)
        state.allocate(job, node_ids, now)
        job.state = JobState.RUNNING
        started.append(job)

    # jobs past the starvation bound run first; if one cannot fit it takes the
    # head reservation and nothing may delay it
    blocked_musts: list[Job] = []
    for e in list(ws.entries):
        if e.ticks >= cfg.starvation_bound:
            if _fits_now(e.job, state, cfg):
                begin(e.job)
                ws.entries.remove(e)
            else:
                blocked_musts.append(e.job)
    reservation = _earliest_fit(blocked_musts[0], state, cfg, now) if blocked_musts else None

    window_jobs = ws.jobs()
    if window_jobs:
        sel = select(window_jobs, state, cfg, spec, params)
        for i in sel.selected_indices():
            job = window_jobs[i]
            if reservation is not None:
                d_small, d_big = _class_consumption(job, state, cfg)
                if not reservation.permits(job, d_small, d_big, cfg, now):
                    continue
                reservation.commit(job, d_small, d_big, now)
            begin(job)
        started_ids = {j.id for j in started}
        ws.entries = [e for e in ws.entries if e.job.id not in started_ids]

    if cfg.backfill:
        waiting = ws.jobs() + queue
        waiting.sort(
            key=lambda j: (-compute_priority(j, now, cfg.base_scheduler), j.submit_time, j.id)
        )
        head = blocked_musts[0] if blocked_musts else None
        started += easy_backfill(waiting, state, cfg, now, head=head)
        started_ids = {j.id for j in started}
        ws.entries = [e for e in ws.entries if e.job.id not in started_ids]

    for e in ws.entries:
        if e.ticks < cfg.starvation_bound:
            e.ticks += 1
    return started


def _reject_impossible(jobs: list[Job], cfg: SystemConfig) -> set[str]:
    """Jobs that could not run even on an idle machine, plus their dependents."""
    rejected: dict[str, str] = {}
    big_total = sum(1 for c in (cfg.node_ssd_capacity or ()) if c > 128)
    for j in jobs:
        if j.nodes_requested > cfg.total_nodes:
            rejected[j.id] = "node"
        elif j.bb_request > cfg.total_bb:
            rejected[j.id] = "burst buffer"
        elif cfg.extension and j.ssd_per_node > 256:
            rejected[j.id] = "per-node SSD"
        elif cfg.extension and j.ssd_per_node > 128 and j.nodes_requested > big_total:
            rejected[j.id] = "large-SSD node"
    changed = True
    while changed:
        changed = False
        for j in jobs:
            if j.id not in rejected and any(d in rejected for d in j.dependencies):
                rejected[j.id] = "rejected dependency"
                changed = True
    for jid in sorted(rejected):
        log.warning("job %s rejected: %s demand exceeds total capacity", jid, rejected[jid])
    return set(rejected)


def _tick_seed(base_seed: int, tick_idx: int) -> int:
    ss = np.random.SeedSequence([base_seed & (2**63 - 1), tick_idx])
    return int(ss.generate_state(1)[0])


def run_simulation(workload: Workload, cfg: SystemConfig, spec: PolicySpec,
                   params: GaParams | None = None) -> list[SimEvent]:
    """Replay the workload under one policy; returns the complete event log."""
    cfg.validate()
    spec.validate()
    workload.validate()
    base = params if params is not None else cfg.ga

    jobs = {j.id: replace(j, dependencies=list(j.dependencies), state=JobState.QUEUED)
            for j in workload.jobs}
    rejected = _reject_impossible(list(jobs.values()), cfg)

    events: list[SimEvent] = []
    heap: list[tuple[int, int, str]] = []  # (time, 0 completion / 1 submission, job id)
    for j in jobs.values():
        if j.id not in rejected:
            heapq.heappush(heap, (j.submit_time, 1, j.id))

    state = SystemState.fresh(cfg)
    ws = WindowState(capacity=cfg.window_size)
    queued: list[Job] = []
    completed: set[str] = set()
    tick_idx = 0

    def fire_tick(now: int) -> None:
        nonlocal tick_idx
        events.append(SimEvent(now, "schedule_tick"))
        queued.sort(key=lambda j: -compute_priority(j, now, cfg.base_scheduler))
        eligible = [j for j in queued if all(d in completed for d in j.dependencies)]
        fill_window(eligible, ws, completed)
        in_window = {e.job.id for e in ws.entries}
        queued[:] = [j for j in queued if j.id not in in_window]
        rest = [j for j in eligible if j.id not in in_window]
        tick_params = replace(base, seed=_tick_seed(base.seed, tick_idx))
        started = schedule_tick(ws, rest, state, cfg, spec, now, tick_params)
        started_ids = {j.id for j in started}
        queued[:] = [j for j in queued if j.id not in started_ids]
        for job in started:
            rj = state.running[job.id]
            events.append(SimEvent(now, "job_start", job.id, job.nodes_requested,
                                   job.bb_request, job.ssd_per_node, rj.node_ids))
            duration = min(job.runtime, job.walltime_estimate)
            heapq.heappush(heap, (now + duration, 0, job.id))
        tick_idx += 1

    if not heap or heap[0][0] > 0:
        fire_tick(0)
    while heap:
        now = heap[0][0]
        while heap and heap[0][0] == now:
            _, order, jid = heapq.heappop(heap)
            job = jobs[jid]
            if order == 0:
                rj = state.release(jid)
                job.state = JobState.COMPLETED
                completed.add(jid)
                events.append(SimEvent(now, "job_end", jid, job.nodes_requested,
                                       job.bb_request, job.ssd_per_node, rj.node_ids))
            else:
                queued.append(job)
                events.append(SimEvent(now, "submit", jid, job.nodes_requested,
                                       job.bb_request, job.ssd_per_node))
        fire_tick(now)
    return events
