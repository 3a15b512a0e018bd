"""Automatic hybrid-parallelism planner for layered models.

Searches data, sharded-data, tensor and pipeline parallelism per layer and
returns the plan with the best estimated training throughput that fits a
per-device memory budget.
"""

from importlib import resources
from pathlib import Path

from .cluster import ClusterSpec, group_bandwidth, load_cluster
from .cost_model import (CostProfile, LayerCost, MemoryBreakdown, collective_volume,
                         estimate_layer_cost, estimate_memory, load_profile, transformation_cost)
from .errors import InfeasibleError, ValidationError
from .model_ir import LayerSpec, ModelSpec, load_model, save_model, uniform_model
from .oracle import exhaustive_dp, exhaustive_plan
from .planner import (ParallelPlan, StageAssignment, dp_search, optimize, partition_pipeline,
                      stage_pipeline_cost)
from .strategy import (HybridStrategy, ParallelDim, StrategySet, contains_dp_and_sdp, degrees,
                       enumerate_strategies, parse_strategy)

__version__ = "0.1.0"


def data_path(*parts: str) -> Path:
    """Path of a bundled fixture, e.g. ``data_path("models", "bert-huge-32.json")``."""
    return Path(str(resources.files(__package__).joinpath("data", *parts)))


__all__ = [
    "ClusterSpec", "CostProfile", "HybridStrategy", "InfeasibleError", "LayerCost", "LayerSpec",
    "MemoryBreakdown", "ModelSpec", "ParallelDim", "ParallelPlan", "StageAssignment",
    "StrategySet", "ValidationError", "collective_volume", "contains_dp_and_sdp", "data_path",
    "degrees", "dp_search", "enumerate_strategies", "estimate_layer_cost", "estimate_memory",
    "exhaustive_dp", "exhaustive_plan", "group_bandwidth", "load_cluster", "load_model",
    "load_profile", "optimize", "parse_strategy", "partition_pipeline", "save_model", "stage_pipeline_cost",
    "transformation_cost", "uniform_model",
]
