"""In-group hybrid strategies: ordered (dimension, degree) compositions of TP, DP and SDP.

Pipeline parallelism is applied outside, before a device group is formed, so it
never appears as a level here.  A strategy over a group of ``n`` devices is an
ordered list of levels whose degrees multiply to ``n``; each dimension may appear
at most once and every degree is a power of two >= 2.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

from .cluster import is_power_of_two
from .errors import ValidationError


class ParallelDim(enum.Enum):
    TP = "tp"
    DP = "dp"
    SDP = "sdp"

    @property
    def rank(self) -> int:
        return _DIM_RANK[self]


_DIM_RANK = {ParallelDim.TP: 0, ParallelDim.DP: 1, ParallelDim.SDP: 2}


@dataclass(frozen=True)
class HybridStrategy:
    levels: tuple[tuple[ParallelDim, int], ...] = ()

    def __post_init__(self):
        levels = tuple((ParallelDim(d), int(k)) for d, k in self.levels)
        object.__setattr__(self, "levels", levels)
        seen = set()
        for dim, degree in levels:
            if dim in seen:
                raise ValidationError(f"dimension {dim.value} repeated in {self}")
            seen.add(dim)
            if degree < 2 or not is_power_of_two(degree):
                raise ValidationError(f"degree of {dim.value} must be a power of two >= 2, got {degree}")

    @property
    def group_size(self) -> int:
        n = 1
        for _, degree in self.levels:
            n *= degree
        return n

    def sort_key(self):
        return (len(self.levels), tuple((d.rank, k) for d, k in self.levels))

    def __str__(self):
        return ",".join(f"{d.value}:{k}" for d, k in self.levels)

    def to_json(self) -> list[str]:
        return [f"{d.value}:{k}" for d, k in self.levels]


def parse_strategy(text: str) -> HybridStrategy:
    """Parse ``"tp:2,dp:4"``; the empty string is the single-device strategy."""
    text = text.strip()
    if not text:
        return HybridStrategy()
    levels = []
    for part in text.split(","):
        name, sep, degree = part.strip().partition(":")
        if not sep:
            raise ValidationError(f"bad strategy level {part!r}, expected dim:degree")
        try:
            dim = ParallelDim(name.strip().lower())
        except ValueError:
            raise ValidationError(f"unknown parallel dimension {name!r}") from None
        try:
            k = int(degree)
        except ValueError:
            raise ValidationError(f"bad degree {degree!r} in {part!r}") from None
        levels.append((dim, k))
    return HybridStrategy(tuple(levels))


def degrees(s: HybridStrategy) -> tuple[int, int, int]:
    """(dp, sdp, tp) degrees; an absent dimension has degree 1."""
    found = {ParallelDim.DP: 1, ParallelDim.SDP: 1, ParallelDim.TP: 1}
    for dim, k in s.levels:
        found[dim] = k
    return found[ParallelDim.DP], found[ParallelDim.SDP], found[ParallelDim.TP]


def contains_dp_and_sdp(s: HybridStrategy) -> bool:
    dims = {d for d, _ in s.levels}
    return ParallelDim.DP in dims and ParallelDim.SDP in dims


@dataclass(frozen=True)
class StrategySet:
    group_size: int
    strategies: tuple[HybridStrategy, ...]
    pruned: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if len(set(self.strategies)) != len(self.strategies):
            raise ValidationError("strategy set contains duplicates")
        for s in self.strategies:
            if s.group_size != self.group_size:
                raise ValidationError(f"strategy {s} does not cover {self.group_size} devices")

    def __len__(self):
        return len(self.strategies)

    def __iter__(self):
        return iter(self.strategies)

    def __getitem__(self, i):
        return self.strategies[i]

    def to_dict(self) -> dict:
        return {"group_size": self.group_size, "pruned": self.pruned,
                "strategies": [s.to_json() for s in self.strategies]}


def _ordered_factorizations(n: int, parts: int) -> Iterable[tuple[int, ...]]:
    # ordered splits of a power of two into `parts` power-of-two factors >= 2
    if parts == 0:
        if n == 1:
            yield ()
        return
    k = 2
    while k <= n:
        if n % k == 0:
            for rest in _ordered_factorizations(n // k, parts - 1):
                yield (k,) + rest
        k *= 2


def enumerate_strategies(group_size: int, prune: bool = True) -> StrategySet:
    """All decision-tree leaves for a device group, in canonical order.

    With ``prune`` set, compositions mixing DP and SDP are dropped: plain SDP over
    the same devices holds fewer parameters and moves less data.
    """
    if not is_power_of_two(group_size):
        raise ValidationError(f"group_size: must be a power of two >= 1, got {group_size!r}")
    found = []
    for height in range(0, 4):
        for dims in itertools.permutations(ParallelDim, height):
            for degs in _ordered_factorizations(group_size, height):
                s = HybridStrategy(tuple(zip(dims, degs)))
                if prune and contains_dp_and_sdp(s):
                    continue
                found.append(s)
    found.sort(key=HybridStrategy.sort_key)
    return StrategySet(group_size, tuple(found), pruned=prune)


def strategy_set(strategies: Sequence[HybridStrategy]) -> StrategySet:
    """Wrap an explicit strategy list (handy for tests); keeps the caller's order."""
    if not strategies:
        raise ValidationError("strategy set must be non-empty")
    return StrategySet(strategies[0].group_size, tuple(strategies), pruned=False)
