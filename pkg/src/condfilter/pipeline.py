"""End-to-end conformal filtering and the baseline strategies it is compared against."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .conformal import ConditionalCalibrator, marginal_threshold
from .kernel import KernelSpec, median_heuristic_bandwidth
from .model import (
    FilterConfig,
    FilterDecision,
    SampleRecord,
    ScoredGeneration,
    decide,
    embeddings_of,
)
from .risk import MonotoneLoss, score_calibration_set

STRATEGY_KINDS = (
    "unaugmented",
    "unfiltered",
    "fixed_surrogate_threshold",
    "hybrid",
    "marginal_cp",
    "conditional_cp",
)
_NEEDS_THRESHOLD = ("fixed_surrogate_threshold", "hybrid")
_NEEDS_CALIBRATION = ("marginal_cp", "conditional_cp")


@dataclass(frozen=True)
class Strategy:
    kind: str
    threshold: Optional[float] = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_KINDS}")
        if self.kind in _NEEDS_THRESHOLD:
            t = 0.5 if self.threshold is None else float(self.threshold)
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"threshold must lie in [0,1], got {t}")
            object.__setattr__(self, "threshold", t)
        elif self.threshold is not None:
            raise ValueError(f"strategy {self.kind} takes no threshold")

    def __str__(self):
        return self.kind if self.threshold is None else f"{self.kind}:{self.threshold:g}"


def parse_strategy(text: str) -> Strategy:
    """Parse ``kind`` or ``kind:threshold`` (e.g. ``hybrid:0.5``)."""
    kind, _, arg = text.strip().partition(":")
    return Strategy(kind, float(arg) if arg else None)


def resolve_kernel(config: FilterConfig, cal_embeddings: np.ndarray) -> KernelSpec:
    if config.bandwidth == "auto":
        return KernelSpec(median_heuristic_bandwidth(cal_embeddings))
    return KernelSpec(float(config.bandwidth))


@dataclass
class Calibration:
    """Scored calibration set, sorted by sample id so results ignore input order."""

    sample_ids: list[str]
    embeddings: np.ndarray
    scores: np.ndarray
    kernel: KernelSpec
    config: FilterConfig
    _conditional: Optional[ConditionalCalibrator] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def conditional(self) -> ConditionalCalibrator:
        if self._conditional is None:
            self._conditional = ConditionalCalibrator(self.embeddings, self.scores, self.kernel, self.config)
        return self._conditional


def calibrate(cal: Sequence[SampleRecord], config: FilterConfig, loss: Optional[MonotoneLoss] = None,
              kernel: Optional[KernelSpec] = None) -> Calibration:
    ordered = sorted(cal, key=lambda r: r.sample_id)
    scored = score_calibration_set(ordered, config, loss)
    emb = embeddings_of(ordered)
    if kernel is None:
        kernel = resolve_kernel(config, emb) if len(ordered) >= 2 else KernelSpec(1.0)
    return Calibration(
        sample_ids=[sid for sid, _ in scored],
        embeddings=emb,
        scores=np.array([s for _, s in scored], dtype=float),
        kernel=kernel,
        config=config,
    )


def _keep_all(rec: SampleRecord) -> FilterDecision:
    return FilterDecision(rec.sample_id, -math.inf, tuple(rec.gen_ids), ())


def _keep_none(rec: SampleRecord) -> FilterDecision:
    return FilterDecision(rec.sample_id, math.inf, (), tuple(rec.gen_ids))


def _gold_decision(rec: SampleRecord, lam: float) -> FilterDecision:
    kept = tuple(g.gen_id for g in rec.generations if g.gold >= lam)
    dropped = tuple(g.gen_id for g in rec.generations if g.gold < lam)
    return FilterDecision(rec.sample_id, None, kept, dropped)


def apply_calibration(calib: Calibration, aug: Sequence[SampleRecord], strategy: Strategy,
                      workers: int = 1) -> list[FilterDecision]:
    """Decisions for the augmentation records from an already-scored calibration set."""
    config = calib.config
    kind = strategy.kind
    if kind == "marginal_cp":
        s_hat = marginal_threshold(calib.scores, config.alpha)
        return [decide(r, s_hat) for r in aug]
    if kind == "conditional_cp":
        if len(calib.scores) < 2:
            raise ValueError("conditional_cp needs at least two calibration records")
        for r in aug:
            if r.dim != calib.dim:
                raise ValueError(f"{r.sample_id}: dimension mismatch (calibration d={calib.dim}, got {r.dim})")
        tests = [(r.sample_id, np.asarray(r.embedding), r.surrogates()) for r in aug]
        results = calib.conditional().cutoffs(tests, workers=workers)
        return [
            decide(r, res.cutoff, res.coverage_gap, {"test_dual": res.test_dual, "probes": res.probes})
            for r, res in zip(aug, results)
        ]
    return run_filter([], aug, strategy, config)


def run_filter(cal: Sequence[SampleRecord], aug: Sequence[SampleRecord], strategy: Strategy,
               config: FilterConfig, workers: int = 1) -> list[FilterDecision]:
    kind = strategy.kind
    if kind == "unaugmented":
        return [_keep_none(r) for r in aug]
    if kind == "unfiltered":
        return [_keep_all(r) for r in aug]
    if kind == "fixed_surrogate_threshold":
        return [decide(r, strategy.threshold) for r in aug]
    if kind == "hybrid":
        return [
            _gold_decision(r, config.lam) if r.has_gold else decide(r, strategy.threshold)
            for r in aug
        ]
    if not cal:
        raise ValueError(f"{kind} requires a nonempty calibration set")
    if kind == "conditional_cp" and len(cal) < 2:
        raise ValueError("conditional_cp needs at least two calibration records")
    return apply_calibration(calibrate(cal, config), aug, strategy, workers)


# -- surrogate smoothing -------------------------------------------------------

FeatureMap = Callable[[SampleRecord, ScoredGeneration], np.ndarray]


def default_features(rec: SampleRecord, gen: ScoredGeneration) -> np.ndarray:
    """Parent embedding followed by the generation's raw surrogate."""
    return np.append(np.asarray(rec.embedding, dtype=float), gen.surrogate)


@dataclass
class SurrogateLearner:
    method: str = "none"
    k: int = 1
    features: FeatureMap = default_features
    _tree: Optional[cKDTree] = field(default=None, repr=False)
    _targets: Optional[np.ndarray] = field(default=None, repr=False)
    _dim: Optional[int] = None

    def predict(self, rec: SampleRecord, gen: ScoredGeneration) -> float:
        if self.method == "none":
            return gen.surrogate
        x = self.features(rec, gen)
        if x.size != self._dim:
            raise ValueError(f"feature dimension mismatch: learner d={self._dim}, got {x.size}")
        _, idx = self._tree.query(x, k=self.k)
        return float(np.mean(self._targets[np.atleast_1d(idx)]))


def train_surrogate_learner(train: Sequence[SampleRecord], method: str = "knn_smoother", k: int = 5,
                            features: FeatureMap = default_features) -> SurrogateLearner:
    """Fit a smoother of the raw surrogate observations stored on ``train``."""
    if method == "none":
        return SurrogateLearner("none")
    if method != "knn_smoother":
        raise ValueError(f"unknown learner {method!r}")
    if k < 1:
        raise ValueError("k must be at least 1")
    rows, targets = [], []
    for rec in train:
        for g in rec.generations:
            rows.append(features(rec, g))
            targets.append(g.surrogate)
    if not rows:
        raise ValueError("empty training split")
    if k > len(rows):
        raise ValueError(f"k={k} exceeds the {len(rows)} training generations")
    x = np.vstack(rows)
    return SurrogateLearner("knn_smoother", k, features, cKDTree(x), np.asarray(targets), x.shape[1])


def apply_surrogate_learner(learner: SurrogateLearner, dataset: Sequence[SampleRecord]) -> list[SampleRecord]:
    out = []
    for rec in dataset:
        gens = tuple(replace(g, smoothed_surrogate=learner.predict(rec, g)) for g in rec.generations)
        out.append(replace(rec, generations=gens))
    return out


# -- splitting -----------------------------------------------------------------

def split_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    """Floor the cumulative cut points; rounding remainders fall to the later splits."""
    if any(f <= 0 for f in fractions):
        raise ValueError("fractions must be positive")
    if sum(fractions) > 1 + 1e-12:
        raise ValueError(f"fractions sum to {sum(fractions)} > 1")
    cuts, acc = [], 0.0
    for f in fractions:
        acc += f
        cuts.append(min(n, math.floor(acc * n + 1e-9)))
    return [b - a for a, b in zip([0] + cuts[:-1], cuts)]


def split_dataset(records: Sequence[SampleRecord], fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Seeded shuffle, then contiguous blocks of the sizes from :func:`split_sizes`."""
    sizes = split_sizes(len(records), fractions)
    order = list(range(len(records)))
    random.Random(seed).shuffle(order)
    out, start = [], 0
    for size in sizes:
        out.append([records[i] for i in order[start:start + size]])
        start += size
    return tuple(out)
