"""Regularized kernel quantile regression with an unpenalized intercept.

Primal, over m anchors with scores S_i::

    min_{beta, f_W}  (1/m) sum_i pinball_alpha(S_i - beta - f_W(X_i)) + (gamma/2) ||f_W||^2

The dual coefficients ``v`` are pinball subgradients, ``v_i in [-alpha, 1-alpha]``
with ``sum(v) = 0``, and ``f_W = (1/(gamma m)) sum_j v_j W(., X_j)``.  Scaling the
dual by ``m`` gives the box-constrained QP solved here::

    min_v  0.5 v'Qv - S'v,   Q = K / (gamma m)

whose gradient ``Qv - S`` equals ``-(residual + beta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .kernel import KernelSpec, gram

JITTER = 1e-10
BOUND_SNAP = 1e-11


class SolverError(RuntimeError):
    """The dual solver exhausted its iteration budget."""

    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@njit(cache=True, nogil=True)
def _smo(Q, s, lo, hi, v, grad, tol, max_iter):
    """Pairwise coordinate descent on the dual; updates ``v`` and ``grad`` in place.

    Returns (iterations, max violation).  Working pairs use second-order
    selection; ``grad`` is recomputed from scratch before declaring
    convergence so accumulated drift cannot fake optimality.
    """
    m = s.shape[0]
    it = 0
    refresh = 0
    while True:
        gmin = np.inf
        gmax = -np.inf
        i = -1
        for k in range(m):
            if v[k] < hi and grad[k] < gmin:
                gmin = grad[k]
                i = k
            if v[k] > lo and grad[k] > gmax:
                gmax = grad[k]
        viol = gmax - gmin
        if viol <= tol:
            if refresh >= 1:
                return it, viol
            # exact gradient refresh
            for k in range(m):
                acc = -s[k]
                for l in range(m):
                    acc += Q[k, l] * v[l]
                grad[k] = acc
            refresh += 1
            continue
        if it >= max_iter:
            return it, viol
        refresh = 0
        # second-order choice of the decreasing coordinate
        best = -1.0
        j = -1
        qii = Q[i, i]
        for k in range(m):
            if v[k] > lo:
                b = grad[k] - gmin
                if b > 0.0:
                    a = qii + Q[k, k] - 2.0 * Q[i, k]
                    if a <= 1e-300:
                        a = 1e-300
                    gain = b * b / a
                    if gain > best:
                        best = gain
                        j = k
        eta = qii + Q[j, j] - 2.0 * Q[i, j]
        room_i = hi - v[i]
        room_j = v[j] - lo
        diff = grad[j] - grad[i]
        if eta > 0.0:
            t = diff / eta
        else:
            t = np.inf
        if t >= room_i or t >= room_j:
            if room_i <= room_j:
                t = room_i
                v[i] = hi
                v[j] = v[j] - t
                if room_i == room_j:
                    v[j] = lo
            else:
                t = room_j
                v[j] = lo
                v[i] = v[i] + t
        else:
            v[i] += t
            v[j] -= t
        for k in range(m):
            grad[k] += t * (Q[k, i] - Q[k, j])
        it += 1


@dataclass
class KqrProblem:
    """Anchors (calibration points plus the test point last) and their scores."""

    anchors: np.ndarray
    scores: np.ndarray
    alpha: float
    gamma: float
    kernel: KernelSpec
    gram_matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        self.scores = np.asarray(self.scores, dtype=float).ravel()
        if self.anchors.shape[0] != self.scores.size:
            raise ValueError(f"{self.anchors.shape[0]} anchors but {self.scores.size} scores")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0,1)")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if self.gram_matrix is None:
            self.gram_matrix = gram(self.anchors, self.kernel)
        elif self.gram_matrix.shape != (self.m, self.m):
            raise ValueError("Gram matrix does not match anchor count")

    @property
    def m(self) -> int:
        return self.scores.size

    def with_test_score(self, s: float) -> "KqrProblem":
        scores = self.scores.copy()
        scores[-1] = s
        return KqrProblem(self.anchors, scores, self.alpha, self.gamma, self.kernel, self.gram_matrix)


@dataclass
class KqrFit:
    intercept: float
    dual_coeffs: np.ndarray
    anchors: np.ndarray
    kernel: KernelSpec
    gamma: float
    alpha: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.dual_coeffs.size

    def rkhs_part(self, x) -> np.ndarray:
        """f_W(x) = (1/(gamma m)) sum_j v_j W(x, X_j), vectorized over rows of x."""
        w = self.kernel.cross(np.atleast_2d(np.asarray(x, dtype=float)), self.anchors)
        return w @ self.dual_coeffs / (self.gamma * self.m)

    def eval(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size != self.anchors.shape[1]:
            raise ValueError(f"dimension mismatch: expected {self.anchors.shape[1]}, got {x.shape}")
        return float(self.intercept + self.rkhs_part(x)[0])

    def eval_many(self, x) -> np.ndarray:
        return self.intercept + self.rkhs_part(x)


def pinball(z, alpha: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return np.maximum((1 - alpha) * z, -alpha * z)


def fitted_at_anchors(problem: KqrProblem, fit: KqrFit) -> np.ndarray:
    return fit.intercept + problem.gram_matrix @ fit.dual_coeffs / (problem.gamma * problem.m)


def primal_objective(problem: KqrProblem, fit: KqrFit) -> float:
    m, g = problem.m, problem.gamma
    v = fit.dual_coeffs
    r = problem.scores - fitted_at_anchors(problem, fit)
    return float(pinball(r, problem.alpha).mean() + v @ problem.gram_matrix @ v / (2 * g * m * m))


def dual_objective(problem: KqrProblem, v: np.ndarray) -> float:
    m, g = problem.m, problem.gamma
    return float(v @ problem.scores / m - v @ problem.gram_matrix @ v / (2 * g * m * m))


def kkt_report(problem: KqrProblem, fit: KqrFit) -> dict:
    """Largest violations of each optimality condition, in score units."""
    a = problem.alpha
    v = fit.dual_coeffs
    r = problem.scores - fitted_at_anchors(problem, fit)
    lo, hi = -a, 1 - a
    box = float(max(0.0, np.max(lo - v), np.max(v - hi)))
    # r > 0 requires v at the upper bound, r < 0 requires the lower bound
    comp_pos = np.where(v < hi, np.maximum(r, 0.0), 0.0)
    comp_neg = np.where(v > lo, np.maximum(-r, 0.0), 0.0)
    return {
        "box": box,
        "sum": float(abs(v.sum())),
        "complementarity": float(max(comp_pos.max(), comp_neg.max())),
        "gap": primal_objective(problem, fit) - dual_objective(problem, v),
    }


class DualPath:
    """Re-solvable dual for one test point; only the test score changes between solves.

    The dual iterate is kept between calls so successive imputed scores are
    warm-started.
    """

    def __init__(self, problem: KqrProblem, tol: float = 1e-8, warm_start: Optional[np.ndarray] = None,
                 max_iter: Optional[int] = None):
        self.problem = problem
        self.tol = float(tol)
        self.alpha = problem.alpha
        m = problem.m
        self.Q = np.ascontiguousarray(problem.gram_matrix / (problem.gamma * m))
        self.s = problem.scores.copy()
        self.lo, self.hi = -self.alpha, 1.0 - self.alpha
        if warm_start is None:
            self.v = np.zeros(m)
        else:
            self.v = np.clip(np.asarray(warm_start, dtype=float).copy(), self.lo, self.hi)
            if abs(self.v.sum()) > 1e-12:
                self.v = np.zeros(m)
        self.grad = self.Q @ self.v - self.s
        self.max_iter = int(max_iter if max_iter is not None else 100 * m * m)
        self.jitter = 0.0
        self.iterations = 0
        self.violation = np.inf

    def _run(self):
        it, viol = _smo(self.Q, self.s, self.lo, self.hi, self.v, self.grad, self.tol, self.max_iter)
        self.iterations += it
        self.violation = viol
        self._snap()
        return viol <= self.tol

    def _snap(self):
        # roundoff leaves some coordinates a few ulps inside the box; put them on
        # the bound so strict comparisons against the bound are exact
        v = self.v
        near_hi = (v != self.hi) & (self.hi - v <= BOUND_SNAP)
        near_lo = (v != self.lo) & (v - self.lo <= BOUND_SNAP)
        if not (near_hi.any() or near_lo.any()):
            return
        old = v.copy()
        v[near_hi] = self.hi
        v[near_lo] = self.lo
        free = np.flatnonzero((v > self.lo + BOUND_SNAP) & (v < self.hi - BOUND_SNAP))
        if free.size:
            v[free[0]] -= v.sum()  # keep sum(v) = 0
        self.grad += self.Q @ (v - old)

    def solve(self) -> None:
        if self._run():
            return
        if self.jitter == 0.0:
            # duplicate anchors make the Gram singular; nudge its diagonal once
            self.jitter = JITTER
            self.Q[np.diag_indices_from(self.Q)] += JITTER / (self.problem.gamma * self.problem.m)
            self.grad = self.Q @ self.v - self.s
            if self._run():
                return
        raise SolverError(
            f"dual solver did not converge within {self.max_iter} updates "
            f"(violation {self.violation:.3g}, jitter {self.jitter})",
            {"violation": self.violation, "iterations": self.iterations, "jitter": self.jitter},
        )

    def set_test_score(self, s: float) -> None:
        delta = float(s) - self.s[-1]
        self.s[-1] = float(s)
        self.grad[-1] -= delta

    def test_dual(self, s: float) -> float:
        self.set_test_score(s)
        self.solve()
        return float(self.v[-1])

    def intercept(self) -> float:
        up = self.v < self.hi
        low = self.v > self.lo
        gmin = self.grad[up].min()
        gmax = self.grad[low].max()
        return float(-(gmin + gmax) / 2)

    def current_fit(self) -> KqrFit:
        p = self.problem
        return KqrFit(
            intercept=self.intercept(),
            dual_coeffs=self.v.copy(),
            anchors=p.anchors,
            kernel=p.kernel,
            gamma=p.gamma,
            alpha=p.alpha,
            diagnostics={"iterations": self.iterations, "violation": float(self.violation),
                         "jitter": self.jitter, "test_score": float(self.s[-1])},
        )


def fit(problem: KqrProblem, tol: float = 1e-8, warm_start: Optional[KqrFit] = None) -> KqrFit:
    if not tol > 0:
        raise ValueError("tol must be positive")
    init = warm_start.dual_coeffs if warm_start is not None else None
    path = DualPath(problem, tol, init)
    path.solve()
    return path.current_fit()


def eval(fit_: KqrFit, x) -> float:  # noqa: A001 - mirrors KqrFit.eval
    return fit_.eval(x)


def dual_at_test(problem: KqrProblem, s: float, warm_start: Optional[KqrFit] = None,
                 tol: float = 1e-8) -> tuple[KqrFit, float]:
    """Refit with the last anchor's score imputed as ``s``; return the fit and its dual coefficient."""
    if not np.isfinite(s):
        raise ValueError("imputed score must be finite")
    result = fit(problem.with_test_score(s), tol, warm_start)
    return result, float(result.dual_coeffs[-1])
