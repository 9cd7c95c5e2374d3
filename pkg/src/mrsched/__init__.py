"""Trace-driven HPC batch-scheduling simulator with multi-resource window selection."""

from .model import (
    GaParams,
    Job,
    JobState,
    ObjectiveVector,
    SelectionVector,
    SystemConfig,
    SystemState,
)
from .moo import (
    ParetoSet,
    brute_force_pareto,
    crossover,
    dominates,
    evaluate_objectives,
    evolve_generation,
    ga_solve,
    generational_distance,
    is_feasible,
    mutate,
    pareto_filter,
)
from .policies import (
    PolicySpec,
    assign_ssd_nodes,
    decide,
    preset,
    select,
    select_bin_packing,
    select_constrained,
    select_naive,
    select_weighted,
)
from .simulator import (
    SimEvent,
    WindowState,
    compute_priority,
    easy_backfill,
    fill_window,
    run_simulation,
    schedule_tick,
)
from .metrics import MetricsReport, bucketize, compute_metrics, emit_comparison
from .trace import (
    Workload,
    generate_workload,
    load_trace,
    parse_trace,
    synthesize_bb_workload,
    synthesize_ssd_workload,
    write_trace,
)

__all__ = [name for name in dir() if not name.startswith("_")]
