"""Brute-force references for the planner.

Every function here enumerates the whole space it is asked about and evaluates
each candidate with the same cost-model calls the planner uses, so a mismatch
points at the search, not at the model.  Sizes are capped; these are for small
instances only.
"""

from __future__ import annotations

import itertools
import math
from typing import Optional, Sequence

import numpy as np

from .cluster import ClusterSpec, group_bandwidth
from .cost_model import (CostProfile, budget_units, estimate_layer_cost, estimate_memory,
                         memory_units, split_feasible, transformation_cost)
from .errors import InfeasibleError, ValidationError
from .model_ir import LayerSpec, ModelSpec
from .planner import (ParallelPlan, StageSolution, assemble_stage, better_plan, micro_batch_candidates,
                      partition_pipeline, stage_pipeline_cost, throughput)
from .strategy import HybridStrategy, enumerate_strategies

MAX_ASSIGNMENTS = 10**6


def _tabulate(layers, strategies, batch, bw, profile):
    k = len(strategies)
    g = profile.memory_granularity_bytes
    cost = np.zeros((len(layers), k))
    units = np.zeros((len(layers), k), dtype=np.int64)
    ok = np.zeros((len(layers), k), dtype=bool)
    trans = np.zeros((len(layers), k, k))
    for l, layer in enumerate(layers):
        for j, s in enumerate(strategies):
            if split_feasible(s, batch):
                ok[l, j] = True
                cost[l, j] = estimate_layer_cost(layer, s, batch, bw, profile).total_ms
                units[l, j] = memory_units(estimate_memory(layer, s, batch, profile).total, g)
        for i, prev in enumerate(strategies):
            for j, cur in enumerate(strategies):
                if l > 0 and i != j:
                    trans[l, i, j] = transformation_cost(layer, prev, cur, batch, bw)
    return cost, units, ok, trans


def _evaluate_all(cost, units, ok, trans, assign):
    """Forward-accumulated cost, summed units and feasibility of every assignment row."""
    acc = np.zeros(assign.shape[0])
    used = np.zeros(assign.shape[0], dtype=np.int64)
    feasible = np.ones(assign.shape[0], dtype=bool)
    for l in range(assign.shape[1]):
        cur = assign[:, l]
        r = trans[l, assign[:, l - 1], cur] if l > 0 else np.zeros(assign.shape[0])
        acc = (acc + r) + cost[l, cur]
        used += np.where(ok[l, cur], units[l, cur], 0)
        feasible &= ok[l, cur]
    return acc, used, feasible


def _all_assignments(num_layers, num_strategies):
    count = num_strategies ** num_layers
    if count > MAX_ASSIGNMENTS:
        raise ValidationError(
            f"oracle guard: {num_strategies}^{num_layers} = {count} assignments exceeds {MAX_ASSIGNMENTS}")
    return np.array(list(itertools.product(range(num_strategies), repeat=num_layers)),
                    dtype=np.int64).reshape(count, num_layers)


def exhaustive_dp(stage_layers: Sequence[LayerSpec], budget_bytes: int,
                  strategies: Sequence[HybridStrategy], batch_per_group: int, bw: float,
                  profile: CostProfile) -> Optional[StageSolution]:
    """Try every per-layer assignment; same tie rule as the DP.

    Ties are broken by fewer memory units, then by the smallest strategy index
    of the last layer, then of the one before it, and so on.
    """
    strategies = tuple(strategies)
    if not strategies:
        raise ValidationError("strategy set must be non-empty")
    if not stage_layers:
        return StageSolution(0.0, (), (), 0)
    assign = _all_assignments(len(stage_layers), len(strategies))
    tables = _tabulate(stage_layers, strategies, batch_per_group, bw, profile)
    acc, used, feasible = _evaluate_all(*tables, assign)
    feasible &= used <= budget_units(budget_bytes, profile.memory_granularity_bytes)
    if not feasible.any():
        return None
    idx = np.flatnonzero(feasible)
    keys = [assign[idx, l] for l in range(assign.shape[1])] + [used[idx], acc[idx]]
    pick = idx[np.lexsort(keys)[0]]
    choice = tuple(int(i) for i in assign[pick])
    return StageSolution(float(acc[pick]), choice, tuple(strategies[i] for i in choice),
                         int(used[pick]))


def exhaustive_plan(model: ModelSpec, cluster: ClusterSpec, profile: Optional[CostProfile],
                    batch_candidates: Sequence[int], guideline: str = "layers") -> ParallelPlan:
    """Enumerate every (batch, pipeline degree, micro-batches, per-layer strategy) plan."""
    profile = profile or CostProfile()
    batch_candidates = list(batch_candidates)
    if not batch_candidates:
        raise ValidationError("batch candidates must be non-empty")
    budget = cluster.memory_budget_bytes
    limit = budget_units(budget, profile.memory_granularity_bytes)
    n = len(model.layers)
    total = 0
    for p in cluster.pp_degrees():
        if p <= n:
            total += len(enumerate_strategies(cluster.num_devices // p)) ** n
    if total * len(batch_candidates) > MAX_ASSIGNMENTS:
        raise ValidationError("oracle guard: plan space too large")

    best = None
    for batch in batch_candidates:
        any_feasible = False
        for p in cluster.pp_degrees():
            if p > n:
                continue
            group = cluster.num_devices // p
            strategies = enumerate_strategies(group, prune=True).strategies
            bw = group_bandwidth(cluster, group)
            ranges = partition_pipeline(model, p, guideline)
            assign = _all_assignments(n, len(strategies))
            ok_all = np.ones(assign.shape[0], dtype=bool)
            stage_cost, stage_used = [], []
            for start, end in ranges:
                tables = _tabulate(model.layers[start:end], strategies, batch, bw, profile)
                acc, used, feasible = _evaluate_all(*tables, assign[:, start:end])
                ok_all &= feasible & (used <= limit)
                stage_cost.append(acc)
                stage_used.append(used)
            if not ok_all.any():
                continue
            any_feasible = True
            ms = micro_batch_candidates(batch, group)
            winner = None
            for row in np.flatnonzero(ok_all):
                costs = [float(c[row]) for c in stage_cost]
                m_best, it_best = None, math.inf
                for m in ms:
                    it = stage_pipeline_cost(costs, p, m)
                    if it < it_best:
                        m_best, it_best = m, it
                key = (it_best,) + tuple(
                    (costs[s], int(stage_used[s][row]),
                     tuple(int(x) for x in reversed(assign[row, start:end])))
                    for s, (start, end) in enumerate(ranges))
                if winner is None or key < winner[0]:
                    winner = (key, row, m_best, costs)
            _, row, m, costs = winner
            stages = []
            for s, (start, end) in enumerate(ranges):
                chosen = [strategies[int(i)] for i in assign[row, start:end]]
                stages.append(assemble_stage(model.layers[start:end], (start, end), chosen,
                                             costs[s], int(stage_used[s][row]), batch, profile))
            iteration = winner[0][0]
            plan = ParallelPlan(p, m, batch, tuple(stages), iteration,
                                throughput(batch, iteration), group, budget)
            if better_plan(plan, best):
                best = plan
        if not any_feasible:
            break
    if best is None:
        raise InfeasibleError("out of memory: no plan fits at the smallest batch size")
    return best
