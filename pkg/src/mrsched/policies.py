"""Job-selection policies over the scheduling window.

All policies return a jointly feasible selection. The optimization policies
(weighted, constrained, bbsched) share the genetic machinery; the tie-break
everywhere prefers selections whose jobs sit earlier in the window, which
preserves the order handed down by the base scheduler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GaParams, Job, ObjectiveVector, SelectionVector, SystemConfig, SystemState
from .moo import (
    EXACT_WINDOW_LIMIT,
    ParetoSet,
    WindowProblem,
    brute_force_pareto,
    enumerate_feasible,
    ga_solve,
    run_ga,
)

KINDS = ("naive", "weighted", "constrained", "bin_packing", "bbsched")


@dataclass(frozen=True)
class PolicySpec:
    """A named selection policy with its parameters."""

    kind: str
    weights: tuple[float, ...] | None = None
    target: int | None = None
    tradeoff_multiplier: float | None = None
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name or self.kind

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "weighted":
            if not self.weights or len(self.weights) not in (2, 4):
                raise ValueError("weighted policy needs 2 or 4 weights")
            if any(w < 0 for w in self.weights):
                raise ValueError("weights must be non-negative")
            if abs(sum(self.weights) - 1.0) > 1e-9:
                raise ValueError("weights must sum to 1")
        if self.kind == "constrained":
            if self.target is None or not 0 <= self.target <= 3:
                raise ValueError("constrained policy needs a target objective index in [0, 3]")
        if self.tradeoff_multiplier is not None and self.tradeoff_multiplier <= 0:
            raise ValueError("tradeoff_multiplier must be positive")


def preset(name: str, extension: bool = False) -> PolicySpec:
    """Build one of the standard comparison methods by name."""
    if name in ("baseline", "naive"):
        return PolicySpec("naive", name=name)
    if name == "weighted":
        k = 4 if extension else 2
        return PolicySpec("weighted", weights=(1.0 / k,) * k, name=name)
    if name == "weighted_cpu":
        return PolicySpec("weighted", weights=(0.8, 0.2), name=name)
    if name == "weighted_bb":
        return PolicySpec("weighted", weights=(0.2, 0.8), name=name)
    if name == "constrained_cpu":
        return PolicySpec("constrained", target=0, name=name)
    if name == "constrained_bb":
        return PolicySpec("constrained", target=1, name=name)
    if name == "constrained_ssd":
        return PolicySpec("constrained", target=2, name=name)
    if name == "bin_packing":
        return PolicySpec("bin_packing", name=name)
    if name == "bbsched":
        return PolicySpec("bbsched", name=name)
    raise ValueError(f"unknown policy preset {name!r}")


def assign_ssd_nodes(job: Job, state: SystemState) -> list[int] | None:
    """Pick nodes for a job, preferring the smallest SSD that still fits.

    Nodes whose SSD is smaller than the per-node demand are ineligible, so
    demands above 128 GB land on 256 GB nodes only. Returns node ids, or None
    when fewer than nodes_requested eligible nodes are free.
    """
    s = job.ssd_per_node
    eligible = sorted(
        (i for i in state.free_node_ids() if state.node_ssd[i] >= s),
        key=lambda i: (state.node_ssd[i], i),
    )
    if len(eligible) < job.nodes_requested:
        return None
    return eligible[: job.nodes_requested]


def _fits_counts(job: Job, free_small: int, free_big: int, free_bb: int,
                 extension: bool) -> bool:
    if job.bb_request > free_bb:
        return False
    if extension:
        if job.ssd_per_node > 256:
            return False
        if job.ssd_per_node > 128:
            return job.nodes_requested <= free_big
    return job.nodes_requested <= free_small + free_big


def _consume_counts(job: Job, free_small: int, free_big: int,
                    extension: bool) -> tuple[int, int]:
    """Free class counts after placing the job with the small-SSD-first rule."""
    n = job.nodes_requested
    if extension and job.ssd_per_node > 128:
        return free_small, free_big - n
    take = min(n, free_small)
    return free_small - take, free_big - (n - take)


def select_naive(window: list[Job], state: SystemState, cfg: SystemConfig) -> SelectionVector:
    """Select jobs in window order until the first one that does not fit."""
    free_small, free_big = state.free_class_counts()
    free_bb = cfg.total_bb - state.bb_used
    bits = [0] * len(window)
    for i, job in enumerate(window):
        if not _fits_counts(job, free_small, free_big, free_bb, cfg.extension):
            break
        bits[i] = 1
        free_small, free_big = _consume_counts(job, free_small, free_big, cfg.extension)
        free_bb -= job.bb_request
    return SelectionVector(tuple(bits))


def select_bin_packing(window: list[Job], state: SystemState, cfg: SystemConfig) -> SelectionVector:
    """Greedy largest dot product between capacity-normalized demand and availability."""
    free_small, free_big = state.free_class_counts()
    free_bb = cfg.total_bb - state.bb_used
    total_n, total_b, total_s = cfg.total_nodes, cfg.total_bb, cfg.total_ssd
    bits = [0] * len(window)
    while True:
        free_ssd = 128 * free_small + 256 * free_big if cfg.extension else 0
        best, best_score = None, None
        for i, job in enumerate(window):
            if bits[i]:
                continue
            if not _fits_counts(job, free_small, free_big, free_bb, cfg.extension):
                continue
            free_n = free_small + free_big
            score = (job.nodes_requested / total_n) * (free_n / total_n)
            if total_b > 0:
                score += (job.bb_request / total_b) * (free_bb / total_b)
            if cfg.extension and total_s > 0:
                score += (job.ssd_per_node * job.nodes_requested / total_s) * (free_ssd / total_s)
            if best_score is None or score > best_score:
                best, best_score = i, score
        if best is None:
            break
        job = window[best]
        bits[best] = 1
        free_small, free_big = _consume_counts(job, free_small, free_big, cfg.extension)
        free_bb -= job.bb_request
    return SelectionVector(tuple(bits))


def _window_order_key(bits: tuple[int, ...]) -> tuple[int, ...]:
    """Sorted selected positions, padded past the window end for comparison.

    Padding makes a selection that extends another with extra jobs compare as
    earlier, so ties go to the selection holding more of the window front.
    """
    pos = [i for i, b in enumerate(bits) if b]
    return tuple(pos + [len(bits)] * (len(bits) - len(pos)))


def _best_row(pop: np.ndarray, scores: np.ndarray) -> tuple[int, ...]:
    """Argmax row; score ties prefer jobs at the front of the window."""
    top = scores.max()
    best = None
    for i in np.flatnonzero(scores == top):
        bits = tuple(int(v) for v in pop[i])
        if best is None or _window_order_key(bits) < _window_order_key(best):
            best = bits
    return best


def _solve_scalar(window, state, cfg, params, scorer_factory) -> SelectionVector:
    """Maximize a scalarized objective over feasible selections.

    Small windows are scanned exhaustively (exact and cheaper than evolving);
    a full window that fits outright is optimal for any monotone two-objective
    scalarization, so both shortcuts return the true argmax. Larger windows
    run the genetic machinery.
    """
    prob = WindowProblem(window, state, cfg)
    if not prob.any_single_fits():
        return SelectionVector((0,) * len(window))
    if prob.arity == 2 and prob.all_fit():
        return SelectionVector((1,) * len(window))
    scorer = scorer_factory(prob)
    if prob.w <= EXACT_WINDOW_LIMIT:
        bits, _ = enumerate_feasible(prob)
        return SelectionVector(_best_row(bits, scorer(bits)[:, 0]))
    pop, _ = run_ga(prob, params, scorer=scorer)
    return SelectionVector(_best_row(pop, scorer(pop)[:, 0]))


def select_weighted(window: list[Job], state: SystemState, cfg: SystemConfig,
                    weights: tuple[float, ...], params: GaParams | None = None) -> SelectionVector:
    """Maximize a weighted sum of objectives, each normalized to its free capacity."""
    params = params if params is not None else cfg.ga
    if not window:
        return SelectionVector(())
    arity = 4 if cfg.extension else 2
    if len(weights) != arity:
        raise ValueError(f"need {arity} weights, got {len(weights)}")

    def factory(prob: WindowProblem):
        free_n = max(prob.free_nodes, 0)
        free_b = max(prob.free_bb, 0)
        free_s = 128 * prob.free128 + 256 * prob.free256 if prob.arity == 4 else 0

        def scorer(pop):
            objs = prob.objectives(pop).astype(float)
            g = np.zeros(len(pop))
            if free_n > 0:
                g += weights[0] * objs[:, 0] / free_n
            if free_b > 0:
                g += weights[1] * objs[:, 1] / free_b
            if prob.arity == 4:
                if free_s > 0:
                    g += weights[2] * objs[:, 2] / free_s
                assigned = objs[:, 2] - objs[:, 3]  # requested plus wasted SSD
                g += weights[3] * np.where(assigned > 0, objs[:, 3] / assigned, 0.0)
            return g[:, None]

        return scorer

    return _solve_scalar(window, state, cfg, params, factory)


def select_constrained(window: list[Job], state: SystemState, cfg: SystemConfig,
                       target: int, params: GaParams | None = None) -> SelectionVector:
    """Maximize one objective; the other resources act only as capacity constraints."""
    params = params if params is not None else cfg.ga
    if not window:
        return SelectionVector(())
    arity = 4 if cfg.extension else 2
    if not 0 <= target < arity:
        raise ValueError(f"target objective {target} out of range for arity {arity}")

    def factory(prob: WindowProblem):
        def scorer(pop):
            return prob.objectives(pop)[:, target:target + 1].astype(float)

        return scorer

    return _solve_scalar(window, state, cfg, params, factory)


def decide(pareto: ParetoSet, window: list[Job], spec: PolicySpec,
           cfg: SystemConfig) -> SelectionVector:
    """Pick from a Pareto set: favor node allocation, switch on a big-enough tradeoff.

    Starting from the member with the most nodes allocated (window order
    breaks ties), another member replaces it when its gain in percentage
    points of the other capacities exceeds ``multiplier`` times the loss in
    node percentage points; the maximum-gain such member wins.
    """
    if not pareto.members:
        raise ValueError("decide requires a non-empty Pareto set")
    arity = pareto.members[0][1].arity
    mult = spec.tradeoff_multiplier if spec.tradeoff_multiplier is not None else (
        4.0 if arity == 4 else 2.0)

    def pp(delta: float, capacity: float) -> float:
        return 100.0 * delta / capacity if capacity > 0 else 0.0

    pick = min(pareto.members, key=lambda m: (-m[1].f1, _window_order_key(m[0].bits)))
    best, best_gain = pick, None
    for m in pareto.members:
        if m is pick:
            continue
        loss = pp(pick[1].f1 - m[1].f1, cfg.total_nodes)
        gain = pp(m[1].f2 - pick[1].f2, cfg.total_bb)
        if arity == 4:
            gain += pp(m[1].f3 - pick[1].f3, cfg.total_ssd)
            waste_pick, waste_m = -pick[1].f4, -m[1].f4
            if waste_pick > 0:
                gain += 100.0 * (waste_pick - waste_m) / waste_pick
        if gain > mult * loss:
            if (best_gain is None or gain > best_gain
                    or (gain == best_gain
                        and _window_order_key(m[0].bits) < _window_order_key(best[0].bits))):
                best, best_gain = m, gain
    return best[0]


def select_bbsched(window: list[Job], state: SystemState, cfg: SystemConfig,
                   spec: PolicySpec, params: GaParams | None = None) -> SelectionVector:
    """Genetic Pareto front plus the tradeoff decision rule."""
    params = params if params is not None else cfg.ga
    if not window:
        return SelectionVector(())
    prob = WindowProblem(window, state, cfg)
    # exact shortcuts: with no single job fitting only the empty selection is
    # feasible, and with two objectives a full window that fits dominates all
    if not prob.any_single_fits():
        return SelectionVector((0,) * len(window))
    if prob.arity == 2 and prob.all_fit():
        return SelectionVector((1,) * len(window))
    if prob.w <= EXACT_WINDOW_LIMIT:
        front = brute_force_pareto(window, state, cfg)
    else:
        front = ga_solve(window, state, cfg, params)
    return decide(front, window, spec, cfg)


def select(window: list[Job], state: SystemState, cfg: SystemConfig,
           spec: PolicySpec, params: GaParams | None = None) -> SelectionVector:
    """Dispatch to the policy named by ``spec``."""
    spec.validate()
    if not window:
        return SelectionVector(())
    if spec.kind == "naive":
        return select_naive(window, state, cfg)
    if spec.kind == "bin_packing":
        return select_bin_packing(window, state, cfg)
    if spec.kind == "weighted":
        return select_weighted(window, state, cfg, spec.weights, params)
    if spec.kind == "constrained":
        return select_constrained(window, state, cfg, spec.target, params)
    return select_bbsched(window, state, cfg, spec, params)
