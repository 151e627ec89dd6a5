import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condfilter.model import FilterConfig
from condfilter.risk import (
    false_inclusion_loss,
    nonconformity_score,
    score_calibration_set,
    score_grid,
)

from conftest import make_record
from oracles import brute_attained, brute_infimum

SUR = (0.9, 0.6, 0.3)
GOLD = (0.7, 0.4, 0.8)


def test_loss_example():
    assert false_inclusion_loss(SUR, GOLD, 0.5, 0.5) == 1


def test_loss_empty_selection():
    assert false_inclusion_loss(SUR, GOLD, 0.95, 0.5) == 0


def test_loss_lambda_zero():
    for s in (-1, 0, 0.3, 0.6, 1):
        assert false_inclusion_loss(SUR, GOLD, s, 0.0) == 0


def test_loss_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        false_inclusion_loss([0.1, 0.2], [0.3], 0.0, 0.5)


def test_score_examples():
    assert nonconformity_score(SUR, GOLD, 0.5, 0) == 0.9
    assert nonconformity_score(SUR, GOLD, 0.5, 1) == 0.3
    assert nonconformity_score(SUR, [0.6, 0.7, 0.8], 0.5, 0) == 0.3


def test_score_infimum_examples():
    # the offending generation sits at 0.6: any cutoff above it is safe
    assert nonconformity_score(SUR, GOLD, 0.5, 0, convention="infimum") == 0.6
    assert nonconformity_score(SUR, GOLD, 0.5, 1, convention="infimum") == pytest.approx(-0.7)
    # top generation bad -> every real cutoff at or below it violates
    assert nonconformity_score([0.9, 0.2], [0.1, 0.9], 0.5, 0, convention="infimum") == 0.9
    assert nonconformity_score([0.9, 0.2], [0.1, 0.9], 0.5, 0) == 1.9


def test_score_errors():
    with pytest.raises(ValueError, match="empty"):
        nonconformity_score([], [], 0.5, 0)
    with pytest.raises(ValueError, match="length mismatch"):
        nonconformity_score([0.1], [0.1, 0.2], 0.5, 0)


def test_grid_has_sentinel():
    g = score_grid([0.3, 0.3, 0.9])
    assert list(g) == [0.3, 0.9, 1.9]


def test_score_calibration_set(example_record):
    cfg = FilterConfig(lam=0.5, rho=0, score_convention="attained")
    assert score_calibration_set([example_record], cfg) == [("r0", 0.9)]
    assert score_calibration_set([], cfg) == []
    twin = make_record("r1", (0.0, 0.0), SUR, GOLD)
    out = score_calibration_set([example_record, twin], cfg)
    assert out[0][1] == out[1][1]


def test_score_calibration_set_requires_gold():
    with pytest.raises(ValueError, match="lacks gold"):
        score_calibration_set([make_record("r", (0,), [0.2])], FilterConfig())


def test_custom_monotone_loss():
    # weighted loss: each bad generation costs 2
    def weighted(idx, gold, lam):
        return 2.0 * np.count_nonzero(gold[idx] < lam)

    assert nonconformity_score(SUR, GOLD, 0.5, 1, loss=weighted) == 0.9
    assert nonconformity_score(SUR, GOLD, 0.5, 2, loss=weighted) == 0.3


# values drawn from a coarse lattice so ties among surrogates are common
lattice = st.integers(0, 10).map(lambda k: k / 10)
instances = st.integers(1, 8).flatmap(
    lambda k: st.tuples(st.lists(lattice, min_size=k, max_size=k), st.lists(lattice, min_size=k, max_size=k))
)


@given(instances, lattice, st.integers(0, 3))
def test_loss_nonincreasing_in_threshold(inst, lam, _rho):
    sur, gold = inst
    thresholds = sorted(set(sur) | {-1.0, 2.0} | {s + 0.05 for s in sur})
    losses = [false_inclusion_loss(sur, gold, s, lam) for s in thresholds]
    assert all(a >= b for a, b in zip(losses, losses[1:]))


@given(instances, lattice, st.integers(0, 3))
def test_score_matches_brute_force(inst, lam, rho):
    sur, gold = inst
    s = nonconformity_score(sur, gold, lam, rho)
    assert s == brute_attained(sur, gold, lam, rho)
    assert s in set(sur) | {max(sur) + 1.0}
    assert false_inclusion_loss(sur, gold, s, lam) <= rho
    assert nonconformity_score(sur, gold, lam, rho, convention="infimum") == brute_infimum(sur, gold, lam, rho)


@given(instances, lattice, st.integers(0, 3))
def test_infimum_characterizes_safe_cutoffs(inst, lam, rho):
    sur, gold = inst
    inf = nonconformity_score(sur, gold, lam, rho, convention="infimum")
    probes = sorted(set(sur) | {inf, inf + 1e-9, inf - 1e-9, -2.0, 3.0})
    never_violated = inf < min(sur)  # true infimum is -inf; any representative below min works
    for c in probes:
        assert (false_inclusion_loss(sur, gold, c, lam) <= rho) == (never_violated or c > inf)


@given(instances, lattice, st.integers(0, 3))
def test_score_nonincreasing_in_rho(inst, lam, rho):
    sur, gold = inst
    for conv in ("attained", "infimum"):
        assert nonconformity_score(sur, gold, lam, rho + 1, convention=conv) <= nonconformity_score(
            sur, gold, lam, rho, convention=conv
        )


@settings(max_examples=50)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_score_exhaustive_subsets(k, seed):
    # every selection is an upper set of the surrogate order; check against all of them
    rng = np.random.default_rng(seed)
    sur = rng.uniform(size=k).round(2)
    gold = rng.uniform(size=k)
    for rho in range(k + 1):
        feasible = [
            min(sur[list(sel)]) if sel else max(sur) + 1
            for r in range(k + 1)
            for sel in itertools.combinations(range(k), r)
            if (not sel or set(np.flatnonzero(sur >= min(sur[list(sel)]))) == set(sel))
            and sum(gold[list(sel)] < 0.5) <= rho
        ]
        assert nonconformity_score(sur, gold, 0.5, rho) == min(feasible)
