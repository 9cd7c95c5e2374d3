"""Core domain types: jobs, machine configuration and instantaneous machine state.

All resource quantities are integral: gigabytes for storage, node counts for
compute, seconds for time. Integral units keep feasibility checks exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class JobState(str, enum.Enum):
    QUEUED = "queued"
    IN_WINDOW = "in_window"
    RUNNING = "running"
    COMPLETED = "completed"


@dataclass
class Job:
    """One batch job: resource demands, timing and lifecycle state."""

    id: str
    submit_time: int
    nodes_requested: int
    walltime_estimate: int
    runtime: int
    bb_request: int = 0        # shared burst buffer demand, GB
    ssd_per_node: int = 0      # local SSD demand per node, GB
    dependencies: list[str] = field(default_factory=list)
    state: JobState = JobState.QUEUED

    def validate(self) -> None:
        if not self.id:
            raise ValueError("job id must be non-empty")
        if self.nodes_requested < 1:
            raise ValueError(f"job {self.id}: nodes_requested must be >= 1")
        if self.walltime_estimate < 1:
            raise ValueError(f"job {self.id}: walltime_estimate must be >= 1")
        if self.runtime < 0:
            raise ValueError(f"job {self.id}: runtime must be >= 0")
        if self.bb_request < 0:
            raise ValueError(f"job {self.id}: bb_request must be >= 0")
        if self.ssd_per_node < 0:
            raise ValueError(f"job {self.id}: ssd_per_node must be >= 0")


@dataclass(frozen=True)
class GaParams:
    """Genetic solver knobs: generations, population size, mutation probability."""

    generations: int = 500
    population: int = 20
    mutation_prob: float = 0.0005
    seed: int = 0

    def validate(self) -> None:
        if self.generations < 1:
            raise ValueError("generations must be >= 1")
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must be in [0, 1]")


@dataclass
class SystemConfig:
    """Machine capacities plus the scheduling knobs shared by every policy.

    node_ssd_capacity is None when per-node SSDs are not modeled; when set it
    must list one capacity per node, each 128 or 256 GB.
    """

    total_nodes: int
    total_bb: int
    node_ssd_capacity: tuple[int, ...] | None = None
    window_size: int = 20
    starvation_bound: int = 50
    base_scheduler: str = "fcfs"
    backfill: bool = True
    ga: GaParams = field(default_factory=GaParams)

    @property
    def extension(self) -> bool:
        return self.node_ssd_capacity is not None

    @property
    def total_ssd(self) -> int:
        return sum(self.node_ssd_capacity) if self.node_ssd_capacity else 0

    def validate(self) -> None:
        if self.total_nodes < 1:
            raise ValueError("total_nodes must be >= 1")
        if self.total_bb < 0:
            raise ValueError("total_bb must be >= 0")
        if self.node_ssd_capacity is not None:
            if len(self.node_ssd_capacity) != self.total_nodes:
                raise ValueError(
                    "node_ssd_capacity must have exactly one entry per node "
                    f"({len(self.node_ssd_capacity)} != {self.total_nodes})"
                )
            bad = sorted({c for c in self.node_ssd_capacity} - {128, 256})
            if bad:
                raise ValueError(f"node SSD capacities must be 128 or 256 GB, got {bad}")
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.starvation_bound < 1:
            raise ValueError("starvation_bound must be >= 1")
        if self.base_scheduler not in ("fcfs", "wfp"):
            raise ValueError(f"unknown base scheduler {self.base_scheduler!r}")
        self.ga.validate()


@dataclass
class RunningJob:
    job: Job
    start_time: int
    node_ids: tuple[int, ...]


@dataclass
class SystemState:
    """Instantaneous allocation: which node runs what, and burst buffer in use."""

    node_job: list[str | None]
    node_ssd: tuple[int, ...]
    bb_used: int = 0
    running: dict[str, RunningJob] = field(default_factory=dict)
    _free_small: int = field(default=-1, repr=False)
    _free_big: int = field(default=-1, repr=False)

    def __post_init__(self) -> None:
        if self._free_small < 0:
            self._free_small = sum(
                1 for i, j in enumerate(self.node_job) if j is None and self.node_ssd[i] <= 128
            )
            self._free_big = sum(
                1 for i, j in enumerate(self.node_job) if j is None and self.node_ssd[i] > 128
            )

    @classmethod
    def fresh(cls, cfg: SystemConfig) -> "SystemState":
        ssd = cfg.node_ssd_capacity if cfg.node_ssd_capacity is not None else (0,) * cfg.total_nodes
        return cls(node_job=[None] * cfg.total_nodes, node_ssd=tuple(ssd))

    @property
    def nodes_used(self) -> int:
        return len(self.node_job) - self._free_small - self._free_big

    def free_node_ids(self) -> list[int]:
        return [i for i, j in enumerate(self.node_job) if j is None]

    def free_node_count(self) -> int:
        return self._free_small + self._free_big

    def free_class_counts(self) -> tuple[int, int]:
        """Free node counts by SSD class: (capacity <= 128, capacity > 128)."""
        return self._free_small, self._free_big

    def allocate(self, job: Job, node_ids: list[int], now: int) -> None:
        for i in node_ids:
            if self.node_job[i] is not None:
                raise ValueError(f"node {i} already occupied by {self.node_job[i]}")
            self.node_job[i] = job.id
            if self.node_ssd[i] > 128:
                self._free_big -= 1
            else:
                self._free_small -= 1
        self.bb_used += job.bb_request
        self.running[job.id] = RunningJob(job, now, tuple(node_ids))

    def release(self, job_id: str) -> RunningJob:
        rj = self.running.pop(job_id)
        for i in rj.node_ids:
            self.node_job[i] = None
            if self.node_ssd[i] > 128:
                self._free_big += 1
            else:
                self._free_small += 1
        self.bb_used -= rj.job.bb_request
        return rj


@dataclass(frozen=True)
class SelectionVector:
    """A chromosome: which window slots are selected, plus a survival age."""

    bits: tuple[int, ...]
    age: int = 0

    def __len__(self) -> int:
        return len(self.bits)

    def selected_indices(self) -> tuple[int, ...]:
        return tuple(i for i, b in enumerate(self.bits) if b)


@dataclass(frozen=True)
class ObjectiveVector:
    """Objective values for one selection: (nodes, bb) or (nodes, bb, ssd, -waste)."""

    values: tuple[float, ...]

    @property
    def arity(self) -> int:
        return len(self.values)

    @property
    def f1(self) -> float:
        return self.values[0]

    @property
    def f2(self) -> float:
        return self.values[1]

    @property
    def f3(self) -> float:
        return self.values[2]

    @property
    def f4(self) -> float:
        return self.values[3]
