"""Homogeneous device cluster with a two-level (island / cross-island) bandwidth model."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ValidationError

GiB = 1 << 30


def is_power_of_two(n) -> bool:
    return isinstance(n, int) and not isinstance(n, bool) and n >= 1 and n & (n - 1) == 0


@dataclass(frozen=True)
class ClusterSpec:
    num_devices: int
    memory_budget_bytes: int
    island_size: int
    intra_island_bw_gbps: float
    inter_island_bw_gbps: float

    def __post_init__(self):
        if not is_power_of_two(self.num_devices):
            raise ValidationError(f"num_devices: must be a power of two, got {self.num_devices}")
        if not is_power_of_two(self.island_size) or self.num_devices % self.island_size:
            raise ValidationError(
                f"island_size: must be a power of two dividing num_devices, got {self.island_size}")
        if not self.memory_budget_bytes > 0:
            raise ValidationError(f"memory_budget_bytes: must be > 0, got {self.memory_budget_bytes}")
        if not self.inter_island_bw_gbps > 0:
            raise ValidationError(f"inter_island_bw_gbps: must be > 0, got {self.inter_island_bw_gbps}")
        if self.intra_island_bw_gbps < self.inter_island_bw_gbps:
            raise ValidationError("intra_island_bw_gbps: must be >= inter_island_bw_gbps")

    def with_budget(self, memory_budget_bytes: int) -> "ClusterSpec":
        return ClusterSpec(self.num_devices, memory_budget_bytes, self.island_size,
                           self.intra_island_bw_gbps, self.inter_island_bw_gbps)

    def pp_degrees(self) -> list[int]:
        out, p = [], 1
        while p <= self.num_devices:
            out.append(p)
            p *= 2
        return out

    def to_dict(self) -> dict:
        return asdict(self)


def cluster_from_dict(data: dict) -> ClusterSpec:
    if not isinstance(data, dict):
        raise ValidationError("cluster: top level must be a JSON object")
    kwargs = {}
    for key, kind in (("num_devices", int), ("memory_budget_bytes", int), ("island_size", int),
                      ("intra_island_bw_gbps", float), ("inter_island_bw_gbps", float)):
        if key not in data:
            raise ValidationError(f"{key}: missing")
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{key}: must be a number, got {value!r}")
        if kind is int and isinstance(value, float):
            if not value.is_integer():
                raise ValidationError(f"{key}: must be an integer, got {value!r}")
            value = int(value)
        kwargs[key] = kind(value)
    return ClusterSpec(**kwargs)


def load_cluster(path) -> ClusterSpec:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON ({exc})") from None
    return cluster_from_dict(data)


def group_bandwidth(cluster: ClusterSpec, group_size: int) -> float:
    """Bandwidth (GB/s) available to collectives inside a group of ``group_size`` devices.

    Groups are packed into islands first; a group larger than an island runs its
    collectives at the cross-island rate, the slowest link on the ring.
    """
    if not is_power_of_two(group_size) or group_size > cluster.num_devices:
        raise ValidationError(
            f"group_size: must be a power of two <= {cluster.num_devices}, got {group_size}")
    if group_size <= cluster.island_size:
        return cluster.intra_island_bw_gbps
    return cluster.inter_island_bw_gbps
