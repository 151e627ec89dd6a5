"""Filtering cutoffs: split-conformal, conditional conformal and the coverage-gap estimate."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .kernel import KernelSpec, gram
from .kqr import DualPath, KqrFit, KqrProblem, SolverError
from .model import DETERMINISTIC, RANDOMIZED, FilterConfig


def marginal_threshold(cal_scores, alpha: float) -> float:
    """The ceil((n+1)(1-alpha))-th smallest calibration score, +inf past the end."""
    s = np.sort(np.asarray(cal_scores, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("empty calibration set")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0,1)")
    n = s.size
    k = math.ceil((n + 1) * (1 - alpha) - 1e-12)
    if k > n:
        return math.inf
    return float(s[k - 1])


@dataclass(frozen=True)
class RandomizationDraw:
    u: float
    mode: str = RANDOMIZED

    def accepts(self, test_dual: float, alpha: float) -> bool:
        if self.mode == DETERMINISTIC:
            return test_dual < 1.0 - alpha
        return test_dual <= self.u


def derived_seed(rng_seed: int, sample_id: str) -> np.random.SeedSequence:
    digest = hashlib.sha256(f"{int(rng_seed)}\x00{sample_id}".encode()).digest()
    return np.random.SeedSequence([int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)])


def draw_for(sample_id: str, config: FilterConfig) -> RandomizationDraw:
    """Uniform draw on (-alpha, 1-alpha) that depends only on the seed and the sample id."""
    if config.randomization == DETERMINISTIC:
        return RandomizationDraw(u=1.0 - config.alpha, mode=DETERMINISTIC)
    rng = np.random.default_rng(derived_seed(config.rng_seed, sample_id))
    u = -config.alpha
    while u <= -config.alpha:
        u = float(rng.uniform(-config.alpha, 1.0 - config.alpha))
    return RandomizationDraw(u=u, mode=RANDOMIZED)


def coverage_gap_estimate(fit: KqrFit, x_prime, cal_embeddings, gamma: float) -> float:
    """Plug-in deviation of local coverage from 1 - alpha: -gamma f_W(x') / mean_i W(X_i, x')."""
    x_prime = np.atleast_2d(np.asarray(x_prime, dtype=float))
    mass = float(fit.kernel.cross(x_prime, cal_embeddings).mean())
    f_w = float(fit.rkhs_part(x_prime)[0])
    if mass <= 0.0:
        if f_w == 0.0:
            return 0.0
        raise ValueError("zero kernel mass at x_prime")
    return -gamma * f_w / mass


@dataclass
class CutoffResult:
    cutoff: float
    test_dual: float
    probes: int
    fit: Optional[KqrFit]
    coverage_gap: Optional[float]


class ConditionalCalibrator:
    """Shared calibration state for per-test-point conditional cutoffs.

    Holds the calibration Gram matrix and a calibration-only dual solution used
    as the warm start of every test point, so each cutoff depends only on its
    own inputs and not on the order in which test points are processed.
    """

    def __init__(self, cal_embeddings, cal_scores, kernel: KernelSpec, config: FilterConfig):
        self.X = np.atleast_2d(np.asarray(cal_embeddings, dtype=float))
        self.S = np.asarray(cal_scores, dtype=float).ravel()
        if self.X.shape[0] != self.S.size:
            raise ValueError("calibration embeddings and scores differ in length")
        if self.S.size < 2:
            raise ValueError("conditional calibration needs at least two calibration records")
        self.kernel = kernel
        self.config = config
        self.K = gram(self.X, kernel)
        base = KqrProblem(self.X, self.S, config.alpha, config.gamma, kernel, self.K)
        path = DualPath(base, config.solver_tol)
        path.solve()
        self.warm = np.append(path.v, 0.0)

    def problem_for(self, x_test) -> KqrProblem:
        x = np.asarray(x_test, dtype=float).ravel()
        if x.size != self.X.shape[1]:
            raise ValueError(f"dimension mismatch: calibration d={self.X.shape[1]}, test d={x.size}")
        n = self.S.size
        k = np.empty((n + 1, n + 1))
        k[:n, :n] = self.K
        col = self.kernel.cross(self.X, x[None, :])[:, 0]
        k[:n, n] = col
        k[n, :n] = col
        k[n, n] = 1.0
        anchors = np.vstack([self.X, x[None, :]])
        scores = np.append(self.S, 0.0)
        return KqrProblem(anchors, scores, self.config.alpha, self.config.gamma, self.kernel, k)

    def bounds(self, test_surrogates) -> tuple[float, float]:
        t = np.asarray(test_surrogates, dtype=float)
        lo = min(self.S.min(), t.min()) if t.size else self.S.min()
        hi = max(self.S.max(), t.max()) if t.size else self.S.max()
        return float(lo - 1.0), float(hi + 1.0)

    def cutoff(self, x_test, test_surrogates, draw: RandomizationDraw) -> CutoffResult:
        cfg = self.config
        path = DualPath(self.problem_for(x_test), cfg.solver_tol, self.warm)
        lo, hi = self.bounds(test_surrogates)
        probes = 0

        def holds(s):
            nonlocal probes
            probes += 1
            try:
                return draw.accepts(path.test_dual(s), cfg.alpha)
            except SolverError as exc:
                exc.diagnostics["imputed_score"] = s
                raise

        if not holds(lo):
            s_hat = lo
        elif holds(hi):
            s_hat = hi
        else:
            # invariant: event holds at lo, fails at hi
            while hi - lo > cfg.bisection_tol:
                mid = 0.5 * (lo + hi)
                if mid <= lo or mid >= hi:
                    break
                if holds(mid):
                    lo = mid
                else:
                    hi = mid
            s_hat = lo
        test_dual = path.test_dual(s_hat)
        fit = path.current_fit()
        gap = coverage_gap_estimate(fit, x_test, self.X, cfg.gamma) if cfg.compute_gap else None
        return CutoffResult(cutoff=s_hat, test_dual=test_dual, probes=probes, fit=fit, coverage_gap=gap)

    def cutoffs(self, tests: Sequence[tuple[str, np.ndarray, np.ndarray]], workers: int = 1) -> list[CutoffResult]:
        """Cutoffs for (sample_id, embedding, surrogates) triples; output follows input order."""

        def one(item):
            sid, x, sur = item
            return self.cutoff(x, sur, draw_for(sid, self.config))

        if workers <= 1 or len(tests) < 2:
            return [one(t) for t in tests]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, tests))


def conditional_cutoff(cal_embeddings, cal_scores, test_embedding, test_surrogates, spec: KernelSpec,
                       config: FilterConfig, draw: RandomizationDraw) -> tuple[float, dict]:
    """Single-test-point convenience wrapper around :class:`ConditionalCalibrator`."""
    res = ConditionalCalibrator(cal_embeddings, cal_scores, spec, config).cutoff(
        test_embedding, test_surrogates, draw
    )
    return res.cutoff, {
        "test_dual": res.test_dual,
        "probes": res.probes,
        "fit": res.fit,
        "coverage_gap": res.coverage_gap,
    }
