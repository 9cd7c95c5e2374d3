"""Multi-objective window selection: objectives, genetic solver, exact oracle.

A selection over the window is scored by the resources it allocates:
node count, burst buffer GB and, when per-node SSDs are modeled, SSD GB
requested plus (negated) SSD GB wasted. The genetic solver approximates the
non-dominated front; ``brute_force_pareto`` enumerates it exactly for small
windows and is kept independent of the solver's domination code on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    GaParams,
    Job,
    ObjectiveVector,
    SelectionVector,
    SystemConfig,
    SystemState,
)

_NO_LIMIT = 1 << 62


@dataclass
class ParetoSet:
    """Mutually non-dominated (selection, objectives) pairs."""

    members: list[tuple[SelectionVector, ObjectiveVector]]

    def objective_values(self) -> set[tuple[float, ...]]:
        return {ov.values for _, ov in self.members}

    def __len__(self) -> int:
        return len(self.members)


class WindowProblem:
    """Vectorized view of one scheduling window against current free capacity.

    Selections are rows of a (K, w) 0/1 int matrix. With per-node SSDs the
    aggregate waste of a selection has a closed form: jobs needing more than
    128 GB per node can only land on 256 GB nodes, the rest greedily fill
    128 GB nodes first, so the number of 128 GB nodes consumed is
    min(small-job nodes, free 128 GB nodes) regardless of assignment order.
    """

    def __init__(self, window: list[Job], state: SystemState, cfg: SystemConfig,
                 arity: int | None = None):
        self.window = list(window)
        self.w = len(self.window)
        self.arity = arity if arity is not None else (4 if cfg.extension else 2)
        self.n = np.array([j.nodes_requested for j in self.window], dtype=np.int64)
        self.b = np.array([j.bb_request for j in self.window], dtype=np.int64)
        self.free_nodes = cfg.total_nodes - state.nodes_used
        self.free_bb = cfg.total_bb - state.bb_used
        if self.arity == 4:
            s = np.array([j.ssd_per_node for j in self.window], dtype=np.int64)
            self.s = s
            self.sn = s * self.n
            big = s > 128
            self.n_big = np.where(big, self.n, 0)
            self.n_small = np.where(big, 0, self.n)
            self.unplaceable = (s > 256).astype(np.int64)
            self.free128, self.free256 = state.free_class_counts()
        else:
            self.n_big = np.zeros(self.w, dtype=np.int64)
            self.unplaceable = np.zeros(self.w, dtype=np.int64)
            self.free128, self.free256 = self.free_nodes, _NO_LIMIT
        # repair clears the greediest bits first: node demand plus BB demand
        # converted to node-equivalents by the capacity ratio
        ratio = cfg.total_nodes / cfg.total_bb if cfg.total_bb > 0 else 0.0
        self.repair_order = np.argsort(-(self.n + self.b * ratio), kind="stable")
        self._repair_order_list = [int(v) for v in self.repair_order]
        self._n_list = self.n.tolist()
        self._b_list = self.b.tolist()
        self._n_big_list = self.n_big.tolist()
        self._unplaceable_list = self.unplaceable.tolist()

    def objectives(self, pop: np.ndarray) -> np.ndarray:
        f1 = pop @ self.n
        f2 = pop @ self.b
        if self.arity == 2:
            return np.stack([f1, f2], axis=1)
        f3 = pop @ self.sn
        small = pop @ self.n_small
        k128 = np.minimum(small, self.free128)
        sum_l = 128 * k128 + 256 * (f1 - k128)
        return np.stack([f1, f2, f3, f3 - sum_l], axis=1)

    def feasible(self, pop: np.ndarray) -> np.ndarray:
        ok = (pop @ self.n <= self.free_nodes) & (pop @ self.b <= self.free_bb)
        if self.arity == 4:
            ok &= (pop @ self.n_big) <= self.free256
            ok &= (pop @ self.unplaceable) == 0
        return ok

    def repair_inplace(self, pop: np.ndarray, rng: np.random.Generator | None = None) -> None:
        """Clear bits of infeasible rows until they fit.

        With an rng, each row drops set bits in its own random order, which
        keeps the population from collapsing onto one repaired shape; without
        one, bits drop in the deterministic greedy order.
        """
        ns_all = pop @ self.n
        bs_all = pop @ self.b
        bad = (ns_all > self.free_nodes) | (bs_all > self.free_bb)
        if self.arity == 4:
            bigs_all = pop @ self.n_big
            imps_all = pop @ self.unplaceable
            bad |= (bigs_all > self.free256) | (imps_all > 0)
        for i in np.flatnonzero(bad):
            row = pop[i]
            ns, bs = int(ns_all[i]), int(bs_all[i])
            bigs = int(bigs_all[i]) if self.arity == 4 else 0
            imps = int(imps_all[i]) if self.arity == 4 else 0
            order = self._repair_order_list if rng is None else rng.permutation(self.w)
            for j in order:
                if (ns <= self.free_nodes and bs <= self.free_bb
                        and bigs <= self.free256 and imps == 0):
                    break
                j = int(j)
                if row[j]:
                    row[j] = 0
                    ns -= self._n_list[j]
                    bs -= self._b_list[j]
                    bigs -= self._n_big_list[j]
                    imps -= self._unplaceable_list[j]

    def any_single_fits(self) -> bool:
        return bool(self.feasible(np.eye(self.w, dtype=np.int64)).any())

    def all_fit(self) -> bool:
        return bool(self.feasible(np.ones((1, self.w), dtype=np.int64))[0])


def evaluate_objectives(x: SelectionVector, window: list[Job], state: SystemState,
                        cfg: SystemConfig, extension: bool = False) -> ObjectiveVector:
    """Exact objective sums for one selection."""
    if len(x.bits) != len(window):
        raise ValueError(f"selection length {len(x.bits)} != window length {len(window)}")
    prob = WindowProblem(window, state, cfg, arity=4 if extension else 2)
    row = np.array([x.bits], dtype=np.int64)
    return ObjectiveVector(tuple(int(v) for v in prob.objectives(row)[0]))


def is_feasible(x: SelectionVector, window: list[Job], state: SystemState,
                cfg: SystemConfig) -> bool:
    """True iff the selection fits the remaining node, BB and SSD capacity."""
    if len(x.bits) != len(window):
        raise ValueError(f"selection length {len(x.bits)} != window length {len(window)}")
    prob = WindowProblem(window, state, cfg)
    return bool(prob.feasible(np.array([x.bits], dtype=np.int64))[0])


def dominates(u: ObjectiveVector, v: ObjectiveVector) -> bool:
    """True iff u is at least as good everywhere and strictly better somewhere."""
    if u.arity != v.arity:
        raise ValueError(f"objective arity mismatch: {u.arity} != {v.arity}")
    ge = all(a >= b for a, b in zip(u.values, v.values))
    gt = any(a > b for a, b in zip(u.values, v.values))
    return ge and gt


def pareto_filter(candidates: list[tuple[SelectionVector, ObjectiveVector]]) -> ParetoSet:
    """Keep exactly the non-dominated candidates; objective-value ties all survive."""
    members = []
    for i, (_, ou) in enumerate(candidates):
        if not any(dominates(ov, ou) for j, (_, ov) in enumerate(candidates) if j != i):
            members.append(candidates[i])
    return ParetoSet(members)


def crossover(a: SelectionVector, b: SelectionVector, cut: int) -> tuple[SelectionVector, SelectionVector]:
    """Single-point crossover at ``cut``; children start at age 0."""
    if len(a.bits) != len(b.bits):
        raise ValueError("parents must have equal length")
    w = len(a.bits)
    if not 1 <= cut <= w - 1:
        raise ValueError(f"cut must be in [1, {w - 1}]")
    c1 = a.bits[:cut] + b.bits[cut:]
    c2 = b.bits[:cut] + a.bits[cut:]
    return SelectionVector(c1, 0), SelectionVector(c2, 0)


def mutate(x: SelectionVector, p_m: float, rng: np.random.Generator) -> SelectionVector:
    """Flip each bit independently with probability p_m; age is preserved."""
    if not 0.0 <= p_m <= 1.0:
        raise ValueError("p_m must be in [0, 1]")
    flips = rng.random(len(x.bits)) < p_m
    bits = tuple(int(b) ^ int(f) for b, f in zip(x.bits, flips))
    return SelectionVector(bits, x.age)


def _dominated_mask(objs: np.ndarray) -> np.ndarray:
    """dominated[j] is True iff some row of objs dominates row j."""
    ge = gt = None
    for k in range(objs.shape[1]):
        c = objs[:, k]
        cge = c[:, None] >= c[None, :]
        cgt = c[:, None] > c[None, :]
        ge = cge if ge is None else ge & cge
        gt = cgt if gt is None else gt | cgt
    return (ge & gt).any(axis=0)


def _select_survivors(pool: np.ndarray, objs: np.ndarray, ages: np.ndarray,
                      parent_count: int, population: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Age-based Pareto survivor selection over a parent+offspring pool.

    Non-dominated members pass first; any remaining slots are filled from the
    dominated set. Lower age wins within either set, then higher first
    objective, then the lexicographically smaller bit vector, then pool order,
    which keeps replays deterministic. Surviving parents age by one.

    Identical chromosomes count as one solution, so the surviving population
    holds distinct selections. Without that, fresh duplicate offspring of one
    front point evict the only copies of other front points and the solver
    forgets parts of the front it already found. The third return value is
    the number of trailing slots that had to be padded with repeats because
    the pool held fewer than ``population`` distinct chromosomes; callers may
    refresh those slots.
    """
    dominated = _dominated_mask(objs)
    packed = np.packbits(pool.astype(bool), axis=1)
    sort_keys = [packed[:, k] for k in range(packed.shape[1] - 1, -1, -1)]
    sort_keys.append(-objs[:, 0])
    sort_keys.append(ages)
    order = np.lexsort(sort_keys)  # stable, so pool order breaks remaining ties
    front, rest, seen = [], [], set()
    for i in order:
        i = int(i)
        key = packed[i].tobytes()
        if key in seen:
            continue
        seen.add(key)
        (front if not dominated[i] else rest).append(i)
    if len(front) >= population:
        chosen = front[:population]
    else:
        chosen = front + rest[: population - len(front)]
    short = population - len(chosen)
    if short:
        chosen = chosen + [int(order[p % len(order)]) for p in range(short)]
    idx = np.array(chosen)
    return pool[idx].copy(), ages[idx] + (idx < parent_count), short


def _evolve_step(prob: WindowProblem, pop: np.ndarray, ages: np.ndarray,
                 params: GaParams, rng: np.random.Generator,
                 scorer) -> tuple[np.ndarray, np.ndarray]:
    population, w = pop.shape
    pairs = (population + 1) // 2
    pa = rng.integers(0, population, size=pairs)
    pb = rng.integers(0, population, size=pairs)
    if w >= 2:
        cuts = rng.integers(1, w, size=pairs)
        left = np.arange(w)[None, :] < cuts[:, None]
        children = np.concatenate(
            [np.where(left, pop[pa], pop[pb]), np.where(left, pop[pb], pop[pa])]
        )[:population]
    else:
        children = np.concatenate([pop[pa], pop[pb]])[:population].copy()
    if params.mutation_prob > 0.0:
        children = children ^ (rng.random(children.shape) < params.mutation_prob)
    prob.repair_inplace(children, rng)
    pool = np.concatenate([pop, children])
    pool_ages = np.concatenate([ages, np.zeros(population, dtype=np.int64)])
    new_pop, new_ages, short = _select_survivors(pool, scorer(pool), pool_ages,
                                                 population, population)
    if short:
        fresh = (rng.random((short, w)) < 0.5).astype(np.int64)
        prob.repair_inplace(fresh, rng)
        new_pop[population - short:] = fresh
        new_ages[population - short:] = 0
    return new_pop, new_ages


def run_ga(prob: WindowProblem, params: GaParams, scorer=None,
           rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Evolve a random feasible population for the configured generations.

    Returns the final (population, ages) arrays. ``scorer`` maps a selection
    matrix to a (K, m) score matrix and defaults to the window objectives;
    scalarized policies pass a single-column scorer.

    The initial population is uniform random except that the leading members
    are seeded with single-job selections (greediest jobs first): repair can
    otherwise erase the expensive genes from every initial member at once,
    leaving crossover nothing to rebuild them from.
    """
    params.validate()
    if rng is None:
        rng = np.random.default_rng(params.seed)
    if scorer is None:
        scorer = prob.objectives
    pop = (rng.random((params.population, prob.w)) < 0.5).astype(np.int64)
    for i in range(min(prob.w, params.population - 2)):
        pop[i] = 0
        pop[i, int(prob.repair_order[i])] = 1
    prob.repair_inplace(pop, rng)
    ages = np.zeros(params.population, dtype=np.int64)
    for _ in range(params.generations):
        pop, ages = _evolve_step(prob, pop, ages, params, rng, scorer)
    return pop, ages


def evolve_generation(pop: list[SelectionVector], window: list[Job], state: SystemState,
                      cfg: SystemConfig, params: GaParams,
                      rng: np.random.Generator) -> list[SelectionVector]:
    """One generation: P offspring by crossover+mutation+repair, then survivor selection."""
    if not pop:
        raise ValueError("population must be non-empty")
    if any(len(x.bits) != len(window) for x in pop):
        raise ValueError("population members must match the window length")
    prob = WindowProblem(window, state, cfg)
    bits = np.array([x.bits for x in pop], dtype=np.int64)
    ages = np.array([x.age for x in pop], dtype=np.int64)
    new_bits, new_ages = _evolve_step(prob, bits, ages, params, rng, prob.objectives)
    return [SelectionVector(tuple(int(v) for v in new_bits[i]), int(new_ages[i]))
            for i in range(len(new_bits))]


def _members_from_rows(pop: np.ndarray, ages: np.ndarray,
                       objs: np.ndarray) -> list[tuple[SelectionVector, ObjectiveVector]]:
    return [
        (SelectionVector(tuple(int(v) for v in pop[i]), int(ages[i])),
         ObjectiveVector(tuple(int(v) for v in objs[i])))
        for i in range(len(pop))
    ]


EXACT_WINDOW_LIMIT = 13  # 2^13 selections enumerate faster than the GA runs


def ga_solve(window: list[Job], state: SystemState, cfg: SystemConfig,
             params: GaParams | None = None, extension: bool | None = None) -> ParetoSet:
    """Approximate the non-dominated front of feasible window selections."""
    if not window:
        raise ValueError("window must be non-empty")
    params = params if params is not None else cfg.ga
    arity = None if extension is None else (4 if extension else 2)
    prob = WindowProblem(window, state, cfg, arity=arity)
    pop, ages = run_ga(prob, params)
    return pareto_filter(_members_from_rows(pop, ages, prob.objectives(pop)))


def _front_mask_2d(objs: np.ndarray) -> np.ndarray:
    """Non-dominated mask for two maximized objectives, keeping value ties.

    Scans f1 groups in descending order; a group's f2 maximum survives iff it
    strictly beats every f2 seen at higher f1.
    """
    order = np.lexsort((-objs[:, 1], -objs[:, 0]))
    keep = np.zeros(len(objs), dtype=bool)
    o = objs[order]
    best_f2 = None
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and o[j, 0] == o[i, 0]:
            j += 1
        gmax = o[i, 1]  # rows are f2-descending within the group
        if best_f2 is None or gmax > best_f2:
            k = i
            while k < j and o[k, 1] == gmax:
                keep[order[k]] = True
                k += 1
            best_f2 = gmax
        i = j
    return keep


def enumerate_feasible(prob: WindowProblem) -> tuple[np.ndarray, np.ndarray]:
    """All feasible selections of a window as (bits, objectives) arrays."""
    if prob.w > 25:
        raise ValueError(f"window of {prob.w} jobs is too large to enumerate (limit 25)")
    bits_parts, objs_parts = [], []
    chunk = 1 << 16
    for start in range(0, 1 << prob.w, chunk):
        masks = np.arange(start, min(start + chunk, 1 << prob.w), dtype=np.int64)
        bits = (masks[:, None] >> np.arange(prob.w)) & 1
        ok = prob.feasible(bits)
        if ok.any():
            bits = bits[ok]
            bits_parts.append(bits)
            objs_parts.append(prob.objectives(bits))
    return np.concatenate(bits_parts), np.concatenate(objs_parts)


def brute_force_pareto(window: list[Job], state: SystemState, cfg: SystemConfig,
                       extension: bool | None = None) -> ParetoSet:
    """Enumerate all 2^w selections and return the exact non-dominated front."""
    w = len(window)
    if w > 25:
        raise ValueError(f"window of {w} jobs is too large to enumerate (limit 25)")
    arity = None if extension is None else (4 if extension else 2)
    prob = WindowProblem(window, state, cfg, arity=arity)
    if w == 0:
        return ParetoSet([(SelectionVector(()), ObjectiveVector((0,) * prob.arity))])

    all_bits, all_objs = enumerate_feasible(prob)

    if prob.arity == 2:
        keep = _front_mask_2d(all_objs)
    else:
        uniq, inverse = np.unique(all_objs, axis=0, return_inverse=True)
        if len(uniq) > 20000:
            raise ValueError("too many distinct objective vectors for exact 4-objective front")
        keep = ~_dominated_mask(uniq)[inverse]

    idx = np.flatnonzero(keep)
    members = [
        (SelectionVector(tuple(int(v) for v in all_bits[i])),
         ObjectiveVector(tuple(int(v) for v in all_objs[i])))
        for i in idx
    ]
    return ParetoSet(members)


def generational_distance(S: ParetoSet, S_star: ParetoSet,
                          scale: tuple[float, ...] | None = None) -> float:
    """Mean Euclidean distance from each member of S to its nearest member of S*.

    ``scale`` divides each objective component first, making heterogeneous
    units (node counts vs gigabytes) commensurable.
    """
    if not S.members or not S_star.members:
        raise ValueError("generational distance requires non-empty sets")
    a = np.array([ov.values for _, ov in S.members], dtype=float)
    b = np.array([ov.values for _, ov in S_star.members], dtype=float)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"objective arity mismatch: {a.shape[1]} != {b.shape[1]}")
    if scale is not None:
        sc = np.array(scale, dtype=float)
        if len(sc) != a.shape[1]:
            raise ValueError("scale arity must match the objectives")
        sc = np.where(sc == 0, 1.0, sc)
        a = a / sc
        b = b / sc
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return float(d.min(axis=1).mean())
