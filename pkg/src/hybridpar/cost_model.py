"""Per-layer memory, time and relayout costs under a hybrid strategy.

Units: bytes for memory and payloads, milliseconds for time, GB/s (1e9 bytes/s)
for bandwidth.  Collectives use ring-algorithm volumes with no latency term.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import InfeasibleError, ValidationError
from .model_ir import LayerSpec
from .strategy import HybridStrategy, degrees

MiB = 1 << 20

ALL_REDUCE = "all_reduce"
ALL_GATHER = "all_gather"
REDUCE_SCATTER = "reduce_scatter"


@dataclass(frozen=True)
class CostProfile:
    backward_multiplier: float = 2.0
    overlap_slowdown: float = 1.3
    optimizer_state_multiplier: float = 2.0
    tp_activation_replication: float = 0.25
    memory_granularity_bytes: int = 64 * MiB

    def __post_init__(self):
        if not self.backward_multiplier > 0:
            raise ValidationError("backward_multiplier: must be > 0")
        if not self.overlap_slowdown >= 1:
            raise ValidationError("overlap_slowdown: must be >= 1")
        if self.optimizer_state_multiplier < 0:
            raise ValidationError("optimizer_state_multiplier: must be >= 0")
        if not 0 <= self.tp_activation_replication <= 1:
            raise ValidationError("tp_activation_replication: must lie in [0, 1]")
        if not self.memory_granularity_bytes > 0:
            raise ValidationError("memory_granularity_bytes: must be > 0")

    def replace(self, **changes) -> "CostProfile":
        return CostProfile(**{**asdict(self), **changes})


def profile_from_dict(data: dict) -> CostProfile:
    if not isinstance(data, dict):
        raise ValidationError("profile: top level must be a JSON object")
    known = {f.name for f in fields(CostProfile)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"profile: unknown field(s) {sorted(unknown)}")
    return CostProfile(**data)


def load_profile(path) -> CostProfile:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from None
    return profile_from_dict(data)


@dataclass(frozen=True)
class MemoryBreakdown:
    params_bytes: float
    grads_bytes: float
    optimizer_bytes: float
    activation_bytes: float

    @property
    def total(self) -> float:
        return self.params_bytes + self.grads_bytes + self.optimizer_bytes + self.activation_bytes


@dataclass(frozen=True)
class LayerCost:
    forward_ms: float
    backward_ms: float
    comm_ms_unoverlapped: float
    total_ms: float


def collective_volume(kind: str, degree: int, payload_bytes: float) -> float:
    """Bytes each device sends for a ring collective over ``degree`` devices."""
    if degree < 1 or payload_bytes < 0:
        raise ValidationError("collective_volume: need degree >= 1 and payload >= 0")
    if degree == 1:
        return 0.0
    frac = (degree - 1) / degree
    if kind == ALL_REDUCE:
        return 2 * frac * payload_bytes
    if kind in (ALL_GATHER, REDUCE_SCATTER):
        return frac * payload_bytes
    raise ValidationError(f"unknown collective {kind!r}")


def transfer_ms(nbytes: float, bw_gbps: float) -> float:
    if nbytes == 0:
        return 0.0
    return nbytes / (bw_gbps * 1e6)


def split_feasible(s: HybridStrategy, batch_per_group: int) -> bool:
    dp, sdp, _ = degrees(s)
    return dp * sdp <= batch_per_group


def _check_split(s: HybridStrategy, batch_per_group):
    if batch_per_group < 1:
        raise ValidationError(f"batch_per_group: must be >= 1, got {batch_per_group}")
    if not split_feasible(s, batch_per_group):
        dp, sdp, _ = degrees(s)
        raise InfeasibleError(
            f"strategy {s or '(single device)'} needs {dp * sdp} data replicas "
            f"but the batch has only {batch_per_group} samples")


def estimate_memory(layer: LayerSpec, s: HybridStrategy, batch_per_group: int,
                    profile: CostProfile) -> MemoryBreakdown:
    """Per-device bytes held for one layer over one training iteration.

    TP and SDP shard parameters (and their gradients and optimizer state); DP and
    SDP split samples.  Under TP a fraction ``tp_activation_replication`` of the
    activations is replicated on every rank instead of being split.
    """
    _check_split(s, batch_per_group)
    dp, sdp, tp = degrees(s)
    params = layer.param_bytes / (tp * sdp)
    rho = profile.tp_activation_replication
    samples = batch_per_group / (dp * sdp)
    acts = layer.activation_bytes_per_sample * samples * ((1 - rho) / tp + rho)
    return MemoryBreakdown(
        params_bytes=params,
        grads_bytes=params,
        optimizer_bytes=params * profile.optimizer_state_multiplier,
        activation_bytes=acts,
    )


@dataclass(frozen=True)
class _CommBreakdown:
    tp_fwd_ms: float
    tp_bwd_ms: float
    sdp_gather_fwd_ms: float
    grad_sync_ms: float

    @property
    def total(self):
        return self.tp_fwd_ms + self.tp_bwd_ms + self.sdp_gather_fwd_ms + self.grad_sync_ms


def _comm_breakdown(layer, s, batch_per_group, bw, profile) -> _CommBreakdown:
    dp, sdp, tp = degrees(s)
    samples = batch_per_group / (dp * sdp)
    # TP all-reduces the replicated boundary activations once forward, once backward
    tp_payload = layer.activation_bytes_per_sample * samples * profile.tp_activation_replication
    tp_ms = transfer_ms(collective_volume(ALL_REDUCE, tp, tp_payload), bw)
    tp_shard = layer.param_bytes / tp
    gather_fwd = transfer_ms(collective_volume(ALL_GATHER, sdp, tp_shard), bw)
    # backward: SDP re-gathers parameters and reduce-scatters gradients; DP
    # all-reduces the gradient shard each device owns
    grad_bytes = (collective_volume(ALL_GATHER, sdp, tp_shard)
                  + collective_volume(REDUCE_SCATTER, sdp, tp_shard)
                  + collective_volume(ALL_REDUCE, dp, tp_shard / sdp))
    return _CommBreakdown(tp_ms, tp_ms, gather_fwd, transfer_ms(grad_bytes, bw))


def estimate_layer_cost(layer: LayerSpec, s: HybridStrategy, batch_per_group: int, bw: float,
                        profile: CostProfile) -> LayerCost:
    """Simulated forward + backward time of one layer for ``batch_per_group`` samples.

    Forward sums compute with the serial TP all-reduce and SDP all-gather.  On the
    backward side, gradient synchronisation (DP/SDP) overlaps compute; when both
    are non-zero the overlapped segment is ``max(compute, comm) * overlap_slowdown``.
    TP collectives stay serial in both directions.
    """
    _check_split(s, batch_per_group)
    if not bw > 0:
        raise ValidationError(f"bandwidth must be > 0, got {bw}")
    dp, sdp, tp = degrees(s)
    samples = batch_per_group / (dp * sdp)
    fwd = layer.fwd_time_per_sample_ms * samples / tp
    bwd = fwd * profile.backward_multiplier
    comm = _comm_breakdown(layer, s, batch_per_group, bw, profile)
    if bwd > 0 and comm.grad_sync_ms > 0:
        overlapped = max(bwd, comm.grad_sync_ms) * profile.overlap_slowdown
    else:
        overlapped = bwd + comm.grad_sync_ms
    forward_side = fwd + comm.tp_fwd_ms + comm.sdp_gather_fwd_ms
    backward_side = overlapped + comm.tp_bwd_ms
    return LayerCost(
        forward_ms=fwd,
        backward_ms=bwd,
        comm_ms_unoverlapped=comm.total,
        total_ms=forward_side + backward_side,
    )


def transformation_cost(layer: LayerSpec, prev: HybridStrategy, cur: HybridStrategy,
                        batch_per_group: int, bw: float) -> float:
    """Time (ms) to relayout tensors when ``cur`` follows a layer run with ``prev``.

    Zero when the two strategies split data and parameters identically, whatever
    their level order.  Otherwise every device all-gathers the activation slice it
    is missing plus, when ``cur`` replicates parameters more than ``prev``, the
    extra parameter bytes.
    """
    if prev.group_size != cur.group_size:
        raise ValidationError(
            f"strategies cover different groups ({prev.group_size} vs {cur.group_size})")
    if prev == cur:
        return 0.0
    pdp, psdp, ptp = degrees(prev)
    cdp, csdp, ctp = degrees(cur)
    if (pdp, psdp, ptp) == (cdp, csdp, ctp):
        return 0.0
    acts = (layer.activation_bytes_per_sample * batch_per_group
            * abs(1 / (cdp * csdp) - 1 / (pdp * psdp)))
    params = max(0.0, layer.param_bytes * (1 / (ctp * csdp) - 1 / (ptp * psdp)))
    return transfer_ms(collective_volume(ALL_GATHER, cur.group_size, acts + params), bw)


def memory_units(nbytes: float, granularity: int) -> int:
    """Discretised memory consumption: rounded up, and never below one unit."""
    return max(1, math.ceil(nbytes / granularity))


def budget_units(budget_bytes: int, granularity: int) -> int:
    return int(budget_bytes // granularity)
