import itertools

import pytest
from hypothesis import given, strategies as st

from hybridpar.errors import ValidationError
from hybridpar.strategy import (HybridStrategy, ParallelDim as D, contains_dp_and_sdp, degrees,
                                enumerate_strategies, parse_strategy)


def brute_force(group_size, prune):
    """Every sequence of up to three (dim, degree) levels, filtered by the tree rules."""
    degs = [2 ** k for k in range(1, group_size.bit_length())]
    found = set()
    for height in range(4):
        for levels in itertools.product(itertools.product(D, degs), repeat=height):
            dims = [d for d, _ in levels]
            if len(set(dims)) != len(dims):
                continue
            prod = 1
            for _, k in levels:
                prod *= k
            if prod != group_size:
                continue
            if prune and D.DP in dims and D.SDP in dims:
                continue
            found.add(levels)
    return found


@pytest.mark.parametrize("n", [1, 2, 4, 8, 16, 32])
@pytest.mark.parametrize("prune", [False, True])
def test_matches_brute_force(n, prune):
    got = enumerate_strategies(n, prune)
    assert {s.levels for s in got} == brute_force(n, prune)
    assert len(got) == len(brute_force(n, prune))


def test_small_groups():
    assert enumerate_strategies(1).strategies == (HybridStrategy(),)
    assert [str(s) for s in enumerate_strategies(2)] == ["tp:2", "dp:2", "sdp:2"]


def test_counts_per_group():
    assert [len(enumerate_strategies(n, False)) for n in (8, 4, 2, 1)] == [21, 9, 3, 1]
    assert [len(enumerate_strategies(n, True)) for n in (8, 4, 2, 1)] == [11, 7, 3, 1]


@pytest.mark.parametrize("n", [0, 3, 6, 12])
def test_rejects_non_power_of_two(n):
    with pytest.raises(ValidationError):
        enumerate_strategies(n)


def test_contains_dp_and_sdp():
    assert contains_dp_and_sdp(parse_strategy("dp:2,sdp:2"))
    assert not contains_dp_and_sdp(parse_strategy("dp:2,tp:2"))
    assert not contains_dp_and_sdp(parse_strategy("sdp:8"))


def test_degrees():
    assert degrees(parse_strategy("tp:2,dp:4")) == (4, 1, 2)
    assert degrees(HybridStrategy()) == (1, 1, 1)
    assert degrees(parse_strategy("sdp:8")) == (1, 8, 1)


def test_parse_round_trip():
    for s in enumerate_strategies(16, prune=False):
        assert parse_strategy(str(s)) == s
    with pytest.raises(ValidationError):
        parse_strategy("pp:2")
    with pytest.raises(ValidationError):
        parse_strategy("tp:3")
    with pytest.raises(ValidationError):
        parse_strategy("tp:2,tp:2")
    with pytest.raises(ValidationError):
        parse_strategy("tp")


def test_order_is_significant():
    a, b = parse_strategy("tp:2,dp:4"), parse_strategy("dp:4,tp:2")
    assert a != b and degrees(a) == degrees(b)


@pytest.mark.parametrize("log_n", range(0, 7))
def test_pruning_soundness_and_counting(log_n):
    n = 1 << log_n
    full, pruned = enumerate_strategies(n, False), enumerate_strategies(n, True)
    assert pruned.strategies == tuple(s for s in full if not contains_dp_and_sdp(s))
    total = sum(len(enumerate_strategies(n // p, True)) for p in (1 << k for k in range(log_n + 1)))
    total_full = sum(len(enumerate_strategies(n // p, False)) for p in (1 << k for k in range(log_n + 1)))
    if n == 8:
        assert (total, total_full) == (22, 34)
    if n >= 4:
        assert total < total_full


def test_deterministic_order():
    assert enumerate_strategies(16).strategies == enumerate_strategies(16).strategies
    keys = [s.sort_key() for s in enumerate_strategies(16, False)]
    assert keys == sorted(keys)


@given(st.lists(st.tuples(st.sampled_from(list(D)), st.sampled_from([1, 2, 3, 4, 8, 16])),
                max_size=4))
def test_closure_by_construction(levels):
    dims = [d for d, _ in levels]
    valid = len(set(dims)) == len(dims) and all(k >= 2 and k & (k - 1) == 0 for _, k in levels)
    if not valid:
        with pytest.raises(ValidationError):
            HybridStrategy(tuple(levels))
        return
    s = HybridStrategy(tuple(levels))
    dp, sdp, tp = degrees(s)
    assert dp * sdp * tp == s.group_size
    if len(levels) <= 3:
        assert s in enumerate_strategies(s.group_size, prune=False).strategies
