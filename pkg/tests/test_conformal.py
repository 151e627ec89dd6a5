import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condfilter.conformal import (
    ConditionalCalibrator,
    RandomizationDraw,
    conditional_cutoff,
    coverage_gap_estimate,
    draw_for,
    marginal_threshold,
)
from condfilter.kernel import KernelSpec
from condfilter.kqr import DualPath, KqrFit
from condfilter.model import FilterConfig


def test_marginal_examples():
    assert marginal_threshold(range(1, 10), 0.1) == 9
    assert marginal_threshold([0.4], 0.1) == math.inf
    assert marginal_threshold([0.3] * 20, 0.1) == 0.3
    with pytest.raises(ValueError, match="empty"):
        marginal_threshold([], 0.1)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40), st.floats(0.01, 0.99))
def test_marginal_order_statistic(scores, alpha):
    t = marginal_threshold(scores, alpha)
    n = len(scores)
    k = math.ceil((n + 1) * (1 - alpha) - 1e-12)
    if k > n:
        assert t == math.inf
    else:
        # at least k scores are <= t and fewer than k are strictly below it
        assert sum(s <= t for s in scores) >= k
        assert sum(s < t for s in scores) < k


def test_draws_are_seeded_per_sample():
    cfg = FilterConfig(alpha=0.1, rng_seed=3)
    a, b = draw_for("x", cfg), draw_for("x", cfg)
    assert a == b and -0.1 < a.u < 0.9
    assert draw_for("y", cfg) != a
    assert draw_for("x", FilterConfig(alpha=0.1, rng_seed=4)) != a
    det = draw_for("x", FilterConfig(randomization="deterministic"))
    assert det.mode == "deterministic"


def test_draws_roughly_uniform():
    cfg = FilterConfig(alpha=0.2, rng_seed=0)
    u = np.array([draw_for(f"s{i}", cfg).u for i in range(4000)])
    assert u.min() > -0.2 and u.max() < 0.8
    assert abs(u.mean() - 0.3) < 0.02


def test_event_conventions():
    det = RandomizationDraw(0.9, "deterministic")
    assert det.accepts(0.5, 0.1) and not det.accepts(0.9, 0.1)
    rnd = RandomizationDraw(0.2)
    assert rnd.accepts(0.2, 0.1) and not rnd.accepts(0.2000001, 0.1)


def calibration_data(seed, n=40, d=2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    s = rng.uniform(size=n)
    return x, s


@pytest.mark.parametrize("seed", range(6))
def test_huge_gamma_reduces_to_marginal(seed):
    x, s = calibration_data(seed, n=int(10 + 7 * seed))
    cfg = FilterConfig(alpha=0.1, gamma=1e8, randomization="deterministic")
    cal = ConditionalCalibrator(x, s, KernelSpec(0.5), cfg)
    t = np.random.default_rng(seed + 100).normal(size=2)
    res = cal.cutoff(t, [0.2, 0.7], draw_for("t", cfg))
    m = marginal_threshold(s, 0.1)
    if math.isinf(m):
        assert res.cutoff == cal.bounds([0.2, 0.7])[1]
    else:
        assert res.cutoff == pytest.approx(m, abs=1e-4)


def test_identical_records_give_identical_cutoffs():
    x = np.zeros((12, 2))
    s = np.full(12, 0.6)
    cfg = FilterConfig(alpha=0.1, randomization="deterministic")
    cal = ConditionalCalibrator(x, s, KernelSpec(1.0), cfg)
    cuts = [cal.cutoff([0.0, 0.0], [0.1, 0.9], draw_for(f"t{i}", cfg)).cutoff for i in range(4)]
    assert len(set(cuts)) == 1
    assert cuts[0] == pytest.approx(0.6, abs=1e-6)


@pytest.mark.parametrize("seed", [0, 1])
def test_randomized_cutoff_is_event_boundary(seed):
    x, s = calibration_data(7)
    cfg = FilterConfig(alpha=0.1, gamma=0.5, rng_seed=seed)
    cal = ConditionalCalibrator(x, s, KernelSpec(0.5), cfg)
    t = np.array([0.3, -0.2])
    draw = draw_for("probe", cfg)
    res = cal.cutoff(t, [0.5], draw)
    lo, hi = cal.bounds([0.5])
    assert lo < res.cutoff < hi
    path = DualPath(cal.problem_for(t))
    assert draw.accepts(path.test_dual(res.cutoff), 0.1)
    assert not draw.accepts(path.test_dual(res.cutoff + 10 * cfg.bisection_tol), 0.1)


def test_extreme_sentinels():
    x, s = calibration_data(3, n=10)
    cfg = FilterConfig(alpha=0.1)
    cal = ConditionalCalibrator(x, s, KernelSpec(0.5), cfg)
    lo, hi = cal.bounds([0.5])
    # u at the lower bound can never be met by a test dual above -alpha
    never = RandomizationDraw(-0.1 - 1e-9)
    assert cal.cutoff([0.0, 0.0], [0.5], never).cutoff == lo
    always = RandomizationDraw(1.0)
    assert cal.cutoff([0.0, 0.0], [0.5], always).cutoff == hi


def test_deterministic_never_below_randomized():
    x, s = calibration_data(5, n=50)
    rnd = FilterConfig(alpha=0.1, gamma=0.2, rng_seed=9)
    det = FilterConfig(alpha=0.1, gamma=0.2, randomization="deterministic")
    cr = ConditionalCalibrator(x, s, KernelSpec(0.5), rnd)
    cd = ConditionalCalibrator(x, s, KernelSpec(0.5), det)
    pts = np.random.default_rng(0).normal(size=(15, 2))
    for i, p in enumerate(pts):
        a = cr.cutoff(p, [0.5], draw_for(f"p{i}", rnd)).cutoff
        b = cd.cutoff(p, [0.5], draw_for(f"p{i}", det)).cutoff
        assert b >= a - 1e-7


def test_parallel_matches_serial_and_order():
    x, s = calibration_data(2, n=30)
    cfg = FilterConfig(alpha=0.1, gamma=0.3, rng_seed=1)
    cal = ConditionalCalibrator(x, s, KernelSpec(0.5), cfg)
    rng = np.random.default_rng(4)
    tests = [(f"t{i}", rng.normal(size=2), rng.uniform(size=3)) for i in range(8)]
    serial = [r.cutoff for r in cal.cutoffs(tests, workers=1)]
    par = [r.cutoff for r in cal.cutoffs(tests, workers=3)]
    rev = [r.cutoff for r in cal.cutoffs(tests[::-1], workers=1)][::-1]
    assert serial == par == rev


def test_wrapper_and_dimension_errors():
    x, s = calibration_data(1, n=10)
    cfg = FilterConfig()
    cut, diag = conditional_cutoff(x, s, [0.0, 0.0], [0.5], KernelSpec(1.0), cfg, draw_for("a", cfg))
    assert math.isfinite(cut) and "test_dual" in diag
    with pytest.raises(ValueError, match="dimension"):
        conditional_cutoff(x, s, [0.0, 0.0, 0.0], [0.5], KernelSpec(1.0), cfg, draw_for("a", cfg))
    with pytest.raises(ValueError, match="two"):
        ConditionalCalibrator(x[:1], s[:1], KernelSpec(1.0), cfg)


def test_gap_zero_duals():
    f = KqrFit(0.3, np.zeros(3), np.eye(3)[:, :2], KernelSpec(1.0), 1.0, 0.1)
    assert coverage_gap_estimate(f, [0.5, 0.5], np.eye(3)[:2, :2], 1.0) == 0.0


def test_gap_direct_three_anchor_instance():
    anchors = np.array([[0.0], [1.0], [2.0]])
    v = np.array([0.5, -0.1, -0.4])
    gamma, xi = 2.0, 0.7
    f = KqrFit(0.0, v, anchors, KernelSpec(xi), gamma, 0.1)
    for xp in (0.5, 4.0, 7.0):
        w = np.exp(-xi * (xp - anchors[:, 0]) ** 2)
        f_w = (v @ w) / (gamma * 3)
        expected = -gamma * f_w / w[:2].mean()
        got = coverage_gap_estimate(f, [xp], anchors[:2], gamma)
        assert got == pytest.approx(expected, rel=1e-12)
        assert math.isfinite(got)


def test_gap_symmetric_cancellation():
    anchors = np.array([[-1.0, 0.0], [1.0, 0.0]])
    f = KqrFit(0.2, np.array([0.3, -0.3]), anchors, KernelSpec(1.0), 1.0, 0.1)
    assert coverage_gap_estimate(f, [0.0, 0.0], anchors, 1.0) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 0.3))
def test_cutoff_within_bounds_and_dual_feasible(seed, alpha):
    x, s = calibration_data(seed, n=15)
    cfg = FilterConfig(alpha=alpha, rng_seed=seed)
    cal = ConditionalCalibrator(x, s, KernelSpec(0.5), cfg)
    res = cal.cutoff(x[0] + 0.1, [0.2, 0.8], draw_for("q", cfg))
    lo, hi = cal.bounds([0.2, 0.8])
    assert lo <= res.cutoff <= hi
    v = res.fit.dual_coeffs
    assert np.all(v >= -alpha - 1e-12) and np.all(v <= 1 - alpha + 1e-12)
    assert abs(v.sum()) < 1e-8


@pytest.mark.parametrize("n", [9, 19, 39])
def test_huge_gamma_with_integer_quantile_index(n):
    # (n+1)(1-alpha) is an integer: every dual sits on a bound and the strict
    # deterministic event must not be flipped by roundoff
    x, s = calibration_data(n, n=n)
    cfg = FilterConfig(alpha=0.1, gamma=1e8, randomization="deterministic")
    cal = ConditionalCalibrator(x, s, KernelSpec(0.5), cfg)
    for i in range(5):
        t = np.random.default_rng(i).normal(size=2)
        res = cal.cutoff(t, [0.5], draw_for(f"t{i}", cfg))
        assert res.cutoff == pytest.approx(marginal_threshold(s, 0.1), abs=1e-4)
