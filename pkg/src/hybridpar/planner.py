"""Plan search: pipeline partitioning, per-stage dynamic programming, throughput argmax.

The outer loop walks batch sizes and pipeline degrees.  For each pair the layers
are cut into balanced stages, every stage is solved by a DP over (layer, remaining
memory, strategy of that layer), and the stage times are folded through a GPipe
schedule model.  The best samples/s over all pairs wins.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .cluster import ClusterSpec, group_bandwidth, is_power_of_two
from .cost_model import (CostProfile, MemoryBreakdown, budget_units, estimate_layer_cost,
                         estimate_memory, memory_units, split_feasible, transformation_cost)
from .errors import InfeasibleError, ValidationError
from .model_ir import LayerSpec, ModelSpec
from .strategy import HybridStrategy, StrategySet, enumerate_strategies

log = logging.getLogger(__name__)

GUIDELINES = ("layers", "params", "memory", "time")
DEFAULT_BATCH_STEP = 8
DEFAULT_MAX_BATCH = 1 << 16

# memory units assigned to a strategy that cannot split the batch at all
_NEVER_FITS = np.iinfo(np.int64).max // 4


# ---------------------------------------------------------------------------
# pipeline partitioning

def _layer_weight(layer: LayerSpec, guideline: str):
    if guideline == "layers":
        return 1
    if guideline == "params":
        return layer.param_bytes
    if guideline == "memory":
        return layer.param_bytes + layer.activation_bytes_per_sample
    if guideline == "time":
        return layer.fwd_time_per_sample_ms
    raise ValidationError(f"pp guideline must be one of {GUIDELINES}, got {guideline!r}")


def partition_pipeline(model: ModelSpec, num_stages: int,
                       guideline: str = "layers") -> list[tuple[int, int]]:
    """Cut the layer list into ``num_stages`` contiguous, non-empty [start, end) ranges.

    The cut minimises the heaviest stage under the chosen weight; among optimal
    cuts the one with the earliest boundaries is returned.
    """
    if num_stages < 1 or not is_power_of_two(num_stages):
        raise ValidationError(f"pipeline degree must be a power of two, got {num_stages}")
    n = len(model.layers)
    if num_stages > n:
        raise InfeasibleError(f"cannot cut {n} layers into {num_stages} pipeline stages")
    weights = [_layer_weight(layer, guideline) for layer in model.layers]
    prefix = [0]
    for w in weights:
        prefix.append(prefix[-1] + w)

    def span(a, b):
        return prefix[b] - prefix[a]

    inf = math.inf
    # best[k][i]: minimal heaviest stage when layers i.. are cut into k stages
    best = [[inf] * (n + 1) for _ in range(num_stages + 1)]
    for i in range(n):
        best[1][i] = span(i, n)
    for k in range(2, num_stages + 1):
        for i in range(n - k + 1):
            value = inf
            for end in range(i + 1, n - k + 2):
                value = min(value, max(span(i, end), best[k - 1][end]))
            best[k][i] = value
    limit = best[num_stages][0]

    ranges, start = [], 0
    for k in range(num_stages, 1, -1):
        for end in range(start + 1, n - k + 2):
            if span(start, end) <= limit and best[k - 1][end] <= limit:
                break
        ranges.append((start, end))
        start = end
    ranges.append((start, n))
    return ranges


# ---------------------------------------------------------------------------
# pipeline schedule

def stage_pipeline_cost(per_stage_costs: Sequence[float], num_stages: int,
                        micro_batches: int) -> float:
    """Iteration time of a synchronous (GPipe) pipeline.

    Stage times are added, then the bubble adds ``num_stages - 1`` slots of the
    slowest stage's per-micro-batch time.  One stage means no bubble.
    """
    if micro_batches < 1:
        raise ValidationError(f"micro_batches must be >= 1, got {micro_batches}")
    if not per_stage_costs:
        return 0.0
    total = 0.0
    for c in per_stage_costs:
        total += c
    if num_stages <= 1:
        return total
    return total + (num_stages - 1) * max(per_stage_costs) / micro_batches


def micro_batch_candidates(batch_size: int, group_size: int) -> list[int]:
    """Divisors m of the batch whose micro-batch still covers the device group.

    m = 1 is always allowed.
    """
    return [m for m in range(1, batch_size + 1)
            if batch_size % m == 0 and (m == 1 or batch_size // m >= group_size)]


# ---------------------------------------------------------------------------
# per-stage dynamic programming

@dataclass
class StageTables:
    """Cost-model lookups for one stage: time, memory units and relayout per choice."""
    cost: np.ndarray           # (L, S) layer time in ms, inf if the split is impossible
    units: np.ndarray          # (L, S) memory units
    transform: np.ndarray      # (L, S, S) R[l, prev, cur]; row 0 unused
    budget_units: int


def build_stage_tables(layers: Sequence[LayerSpec], strategies: Sequence[HybridStrategy],
                       budget_bytes: int, batch_per_group: int, bw: float,
                       profile: CostProfile) -> StageTables:
    n, k = len(layers), len(strategies)
    cost = np.full((n, k), np.inf)
    units = np.full((n, k), _NEVER_FITS, dtype=np.int64)
    transform = np.zeros((n, k, k))
    g = profile.memory_granularity_bytes
    usable = [split_feasible(s, batch_per_group) for s in strategies]
    for l, layer in enumerate(layers):
        for j, s in enumerate(strategies):
            if not usable[j]:
                continue
            cost[l, j] = estimate_layer_cost(layer, s, batch_per_group, bw, profile).total_ms
            units[l, j] = memory_units(estimate_memory(layer, s, batch_per_group, profile).total, g)
        if l == 0:
            continue
        for i, prev in enumerate(strategies):
            for j, cur in enumerate(strategies):
                if i != j:
                    transform[l, i, j] = transformation_cost(layer, prev, cur, batch_per_group, bw)
    return StageTables(cost, units, transform, budget_units(budget_bytes, g))


@dataclass
class DPTable:
    """C[l, e, s]: cheapest first-l layers within e memory units, layer l using s."""
    cost: np.ndarray   # (L+1, E+1, S)
    back: np.ndarray   # (L+1, E+1, S) strategy index of layer l-1, -1 where undefined
    tables: StageTables


@dataclass(frozen=True)
class StageSolution:
    cost_ms: float
    choice: tuple[int, ...]
    strategies: tuple[HybridStrategy, ...]
    memory_units: int


def fill_dp_table(tables: StageTables) -> DPTable:
    n, k = tables.cost.shape
    e_max = tables.budget_units
    cost = np.full((n + 1, e_max + 1, k), np.inf)
    cost[0] = 0.0
    back = np.full((n + 1, e_max + 1, k), -1, dtype=np.int64)
    for l in range(1, n + 1):
        for j in range(k):
            o = int(tables.units[l - 1, j])
            c = tables.cost[l - 1, j]
            if o > e_max or not np.isfinite(c):
                continue
            prev = cost[l - 1, : e_max + 1 - o, :]
            cand = (prev + tables.transform[l - 1, :, j]) + c
            if l == 1:
                cost[l, o:, j] = cand[:, 0]
                continue
            best = np.argmin(cand, axis=1)
            cost[l, o:, j] = cand[np.arange(cand.shape[0]), best]
            back[l, o:, j] = best
    return DPTable(cost, back, tables)


def backtrack(table: DPTable) -> Optional[tuple[float, tuple[int, ...], int]]:
    """Optimal (cost, strategy indices, memory units) from a filled table.

    Ties: lowest memory first, then the smallest strategy index for the last
    layer, then for the layer before it, and so on.
    """
    n = table.cost.shape[0] - 1
    if n == 0:
        return 0.0, (), 0
    final = table.cost[n]
    opt = final[-1].min()
    if not np.isfinite(opt):
        return None
    e = int(np.argmax(final.min(axis=1) == opt))
    j = int(np.argmax(final[e] == opt))
    used = e
    picks = [j]
    for l in range(n, 1, -1):
        i = int(table.back[l, e, j])
        e -= int(table.tables.units[l - 1, j])
        j = i
        picks.append(j)
    picks.reverse()
    return float(opt), tuple(picks), used


def dp_search(stage_layers: Sequence[LayerSpec], budget_bytes: int, strategies: StrategySet,
              batch_per_group: int, bw: float, profile: CostProfile) -> Optional[StageSolution]:
    """Cheapest per-layer strategy assignment whose memory fits ``budget_bytes``.

    Returns None when nothing fits.  An empty stage costs nothing.
    """
    strategies = tuple(strategies)
    if not strategies:
        raise ValidationError("strategy set must be non-empty")
    if not stage_layers:
        return StageSolution(0.0, (), (), 0)
    tables = build_stage_tables(stage_layers, strategies, budget_bytes, batch_per_group, bw, profile)
    found = backtrack(fill_dp_table(tables))
    if found is None:
        return None
    cost, choice, used = found
    return StageSolution(cost, choice, tuple(strategies[i] for i in choice), used)


# ---------------------------------------------------------------------------
# whole-plan search

@dataclass(frozen=True)
class StageAssignment:
    layer_range: tuple[int, int]
    per_layer_strategy: tuple[HybridStrategy, ...]
    stage_cost_ms: float
    peak_memory_bytes: float
    layer_memory: tuple[MemoryBreakdown, ...] = ()
    memory_units: int = 0

    def to_dict(self) -> dict:
        return {
            "layer_range": list(self.layer_range),
            "strategies": [str(s) for s in self.per_layer_strategy],
            "stage_cost_ms": self.stage_cost_ms,
            "peak_memory_bytes": self.peak_memory_bytes,
            "layer_memory": [
                {"params_bytes": m.params_bytes, "grads_bytes": m.grads_bytes,
                 "optimizer_bytes": m.optimizer_bytes, "activation_bytes": m.activation_bytes,
                 "total_bytes": m.total}
                for m in self.layer_memory
            ],
        }


@dataclass(frozen=True)
class ParallelPlan:
    pp_degree: int
    micro_batch_count: int
    global_batch_size: int
    stages: tuple[StageAssignment, ...]
    iteration_time_ms: float
    throughput_samples_per_s: float
    group_size: int = 1
    memory_budget_bytes: int = 0

    @property
    def layer_strategies(self) -> list[HybridStrategy]:
        return [s for stage in self.stages for s in stage.per_layer_strategy]

    def to_dict(self) -> dict:
        return {
            "pp_degree": self.pp_degree,
            "micro_batches": self.micro_batch_count,
            "batch_size": self.global_batch_size,
            "group_size": self.group_size,
            "memory_budget_bytes": self.memory_budget_bytes,
            "iteration_time_ms": self.iteration_time_ms,
            "throughput": self.throughput_samples_per_s,
            "layer_strategies": [str(s) for s in self.layer_strategies],
            "stages": [stage.to_dict() for stage in self.stages],
        }


def throughput(batch_size: int, iteration_ms: float) -> float:
    if iteration_ms <= 0:
        return math.inf
    return batch_size / (iteration_ms / 1000.0)


def better_plan(candidate: ParallelPlan, incumbent: Optional[ParallelPlan]) -> bool:
    """Higher throughput wins; on an exact tie the larger batch does.

    Callers visit pipeline degrees in ascending order, so among equal batch sizes
    the first (smallest) degree is kept.
    """
    if incumbent is None:
        return True
    if candidate.throughput_samples_per_s != incumbent.throughput_samples_per_s:
        return candidate.throughput_samples_per_s > incumbent.throughput_samples_per_s
    return candidate.global_batch_size > incumbent.global_batch_size


def best_micro_batches(stage_costs: Sequence[float], num_stages: int, batch_size: int,
                       group_size: int) -> tuple[int, float]:
    best_m, best_c = 1, math.inf
    for m in micro_batch_candidates(batch_size, group_size):
        c = stage_pipeline_cost(stage_costs, num_stages, m)
        if c < best_c:
            best_m, best_c = m, c
    return best_m, best_c


def assemble_stage(layers: Sequence[LayerSpec], layer_range, strategies: Sequence[HybridStrategy],
                   cost_ms: float, used_units: int, batch_size: int,
                   profile: CostProfile) -> StageAssignment:
    mem = tuple(estimate_memory(layer, s, batch_size, profile) for layer, s in zip(layers, strategies))
    peak = 0.0
    for m in mem:
        peak += m.total
    return StageAssignment(tuple(layer_range), tuple(strategies), cost_ms, peak, mem, used_units)


def _diagnose(layers, strategies, budget_bytes, batch_size, profile, stage_index) -> str:
    usable = [s for s in strategies if split_feasible(s, batch_size)]
    if not usable:
        return (f"stage {stage_index}: batch {batch_size} is smaller than the data-parallel "
                f"width of every strategy")
    g = profile.memory_granularity_bytes
    total = 0
    for layer in layers:
        need = min(memory_units(estimate_memory(layer, s, batch_size, profile).total, g)
                   for s in usable)
        if need > budget_units(budget_bytes, g):
            return (f"stage {stage_index}: layer {layer.id} needs >= {need * g} bytes under every "
                    f"strategy, budget is {budget_bytes}")
        total += need
    return (f"stage {stage_index}: layers need >= {total * g} bytes together, "
            f"budget is {budget_bytes}")


@dataclass
class _Attempt:
    batch_size: int
    pp_degree: int
    plan: Optional[ParallelPlan]
    diagnostic: str = ""


def plan_for(model: ModelSpec, cluster: ClusterSpec, profile: CostProfile, batch_size: int,
             pp_degree: int, guideline: str = "layers") -> _Attempt:
    """Best plan for one (batch size, pipeline degree) pair."""
    if pp_degree > len(model.layers):
        return _Attempt(batch_size, pp_degree, None, f"P={pp_degree} exceeds layer count")
    group = cluster.num_devices // pp_degree
    strategies = enumerate_strategies(group, prune=True)
    bw = group_bandwidth(cluster, group)
    budget = cluster.memory_budget_bytes
    stages, costs = [], []
    for idx, (start, end) in enumerate(partition_pipeline(model, pp_degree, guideline)):
        layers = model.layers[start:end]
        sol = dp_search(layers, budget, strategies, batch_size, bw, profile)
        if sol is None:
            why = _diagnose(layers, strategies, budget, batch_size, profile, idx)
            return _Attempt(batch_size, pp_degree, None, f"B={batch_size} P={pp_degree}: {why}")
        stages.append(assemble_stage(layers, (start, end), sol.strategies, sol.cost_ms,
                                     sol.memory_units, batch_size, profile))
        costs.append(sol.cost_ms)
    m, iteration = best_micro_batches(costs, pp_degree, batch_size, group)
    plan = ParallelPlan(pp_degree, m, batch_size, tuple(stages), iteration,
                        throughput(batch_size, iteration), group, budget)
    return _Attempt(batch_size, pp_degree, plan)


def default_batch_candidates(step: int = DEFAULT_BATCH_STEP,
                             limit: int = DEFAULT_MAX_BATCH) -> Iterable[int]:
    return range(step, limit + 1, step)


def optimize(model: ModelSpec, cluster: ClusterSpec, profile: Optional[CostProfile] = None,
             batch_candidates: Optional[Sequence[int]] = None, guideline: str = "layers",
             max_workers: Optional[int] = None) -> ParallelPlan:
    """Throughput-optimal plan over batch sizes and pipeline degrees.

    Batch sizes are tried in ascending order; the search stops at the first batch
    size for which no pipeline degree fits in memory.  Raises InfeasibleError if
    even the first batch size fits nowhere.
    """
    profile = profile or CostProfile()
    if guideline not in GUIDELINES:
        raise ValidationError(f"pp guideline must be one of {GUIDELINES}, got {guideline!r}")
    if batch_candidates is None:
        batch_candidates = default_batch_candidates()
    else:
        batch_candidates = list(batch_candidates)
        if not batch_candidates:
            raise ValidationError("batch candidates must be non-empty")
        if any(b < 1 for b in batch_candidates) or batch_candidates != sorted(set(batch_candidates)):
            raise ValidationError("batch candidates must be positive and strictly ascending")
    degrees_to_try = cluster.pp_degrees()

    best: Optional[ParallelPlan] = None
    first_failure: list[str] = []
    pool = ThreadPoolExecutor(max_workers) if max_workers and max_workers > 1 else None
    try:
        for batch_size in batch_candidates:
            if pool is None:
                attempts = [plan_for(model, cluster, profile, batch_size, p, guideline)
                            for p in degrees_to_try]
            else:
                attempts = list(pool.map(
                    lambda p: plan_for(model, cluster, profile, batch_size, p, guideline),
                    degrees_to_try))
            feasible = [a for a in attempts if a.plan is not None]
            if not feasible:
                if best is None:
                    first_failure = [a.diagnostic for a in attempts]
                log.debug("batch %d fits under no pipeline degree; stopping", batch_size)
                break
            for a in feasible:
                if better_plan(a.plan, best):
                    best = a.plan
    finally:
        if pool is not None:
            pool.shutdown()
    if best is None:
        raise InfeasibleError("out of memory: no plan fits at the smallest batch size",
                              diagnostic="; ".join(first_failure))
    return best


def recompute_stage_memory(model: ModelSpec, plan: ParallelPlan,
                           profile: Optional[CostProfile] = None) -> list[float]:
    """Per-device bytes of every stage, recomputed from scratch from the plan."""
    profile = profile or CostProfile()
    out = []
    for stage in plan.stages:
        start, end = stage.layer_range
        total = 0.0
        for layer, s in zip(model.layers[start:end], stage.per_layer_strategy):
            total += estimate_memory(layer, s, plan.global_batch_size, profile).total
        out.append(total)
    return out
