"""Synthetic scenarios, coverage measurement, selection metrics and diversity metrics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .model import FilterConfig, FilterDecision, SampleRecord, ScoredGeneration

HOMOGENEOUS = "homogeneous"
HETEROGENEOUS = "heterogeneous_by_region"


@dataclass(frozen=True)
class ScenarioSpec:
    """Exchangeable calibration/augmentation draws.

    Gold scores are Beta with mean ``gold_mean`` (shifted by -/+ ``region_gap``/2
    on the two half-spaces split by the first embedding coordinate when
    heterogeneous) and concentration ``gold_concentration``.
    """

    n_cal: int = 200
    n_aug: int = 100
    K: int = 5
    d: int = 2
    gold_model: str = HOMOGENEOUS
    surrogate_noise_sd: float = 0.15
    seed: int = 0
    gold_mean: float = 0.65
    gold_concentration: float = 4.0
    region_gap: float = 0.3

    def __post_init__(self):
        for name in ("n_cal", "n_aug", "K", "d"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.surrogate_noise_sd < 0:
            raise ValueError("surrogate_noise_sd must be nonnegative")
        if self.gold_model not in (HOMOGENEOUS, HETEROGENEOUS):
            raise ValueError(f"unknown gold_model {self.gold_model!r}")
        if not self.gold_concentration > 0:
            raise ValueError("gold_concentration must be positive")
        lo = self.gold_mean - (self.region_gap / 2 if self.gold_model == HETEROGENEOUS else 0.0)
        hi = self.gold_mean + (self.region_gap / 2 if self.gold_model == HETEROGENEOUS else 0.0)
        if not (0 < lo and hi < 1):
            raise ValueError("gold means must stay inside (0,1)")


@dataclass
class Scenario:
    cal: list[SampleRecord]
    aug: list[SampleRecord]  # gold stripped
    hidden_gold: dict[str, dict[str, float]]
    regions: dict[str, int]


def region_of(x: np.ndarray) -> int:
    return int(x[0] >= 0.0)


def gold_mean_at(spec: ScenarioSpec, x: np.ndarray) -> float:
    if spec.gold_model == HOMOGENEOUS:
        return spec.gold_mean
    return spec.gold_mean + (spec.region_gap / 2 if region_of(x) else -spec.region_gap / 2)


def _records(spec: ScenarioSpec, rng: np.random.Generator, n: int, prefix: str):
    records, regions = [], {}
    for i in range(n):
        sid = f"{prefix}-{i:05d}"
        x = rng.standard_normal(spec.d)
        mu = gold_mean_at(spec, x)
        c = spec.gold_concentration
        gold = rng.beta(mu * c, (1 - mu) * c, size=spec.K)
        noise = rng.standard_normal(spec.K) * spec.surrogate_noise_sd
        sur = np.clip(gold + noise, 0.0, 1.0)
        gens = tuple(
            ScoredGeneration(f"{sid}-g{k}", float(sur[k]), float(gold[k])) for k in range(spec.K)
        )
        label = str(int(rng.random() < 0.5))
        records.append(SampleRecord(sid, tuple(x), label, gens))
        regions[sid] = region_of(x)
    return records, regions


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    rng = np.random.default_rng(spec.seed)
    cal, reg_c = _records(spec, rng, spec.n_cal, "cal")
    aug_full, reg_a = _records(spec, rng, spec.n_aug, "aug")
    hidden = {r.sample_id: {g.gen_id: g.gold for g in r.generations} for r in aug_full}
    return Scenario(cal, [r.without_gold() for r in aug_full], hidden, {**reg_c, **reg_a})


def realized_loss(decision: FilterDecision, gold: Mapping[str, float], lam: float) -> int:
    return sum(1 for gid in decision.kept if gold[gid] < lam)


def _aligned(decisions: Sequence[FilterDecision], hidden_gold: Mapping[str, Mapping[str, float]]):
    for d in decisions:
        if d.sample_id not in hidden_gold:
            raise KeyError(f"no gold scores for sample {d.sample_id}")
        gold = hidden_gold[d.sample_id]
        missing = set(d.kept) | set(d.dropped)
        missing -= set(gold)
        if missing:
            raise KeyError(f"{d.sample_id}: no gold for generations {sorted(missing)}")
        yield d, gold


def empirical_coverage(decisions: Sequence[FilterDecision], hidden_gold, lam: float, rho: float) -> float:
    """Fraction of records whose realized false-inclusion loss is at most ``rho``."""
    hits = [realized_loss(d, g, lam) <= rho for d, g in _aligned(decisions, hidden_gold)]
    if not hits:
        raise ValueError("no decisions")
    return float(np.mean(hits))


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    flags: tuple[str, ...] = ()


def prf_from_counts(tp: int, fp: int, fn: int) -> PRF:
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("no_predicted_positive")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("no_actual_positive")
    else:
        recall = tp / (tp + fn)
    if precision + recall == 0:
        f1 = 0.0
        flags.append("zero_f1")
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return PRF(precision, recall, f1, tuple(flags))


def selection_prf(decisions: Sequence[FilterDecision], hidden_gold, lam: float) -> PRF:
    """Kept-vs-good agreement over all generations, good meaning gold >= lam."""
    return prf_from_counts(*selection_counts(decisions, hidden_gold, lam))


def selection_counts(decisions: Sequence[FilterDecision], hidden_gold, lam: float) -> tuple[int, int, int]:
    """(true positives, false positives, false negatives) of keeping versus gold >= lam."""
    tp = fp = fn = 0
    for d, gold in _aligned(decisions, hidden_gold):
        kept = set(d.kept)
        for gid in list(d.kept) + list(d.dropped):
            good = gold[gid] >= lam
            if gid in kept:
                tp += good
                fp += not good
            else:
                fn += good
    return tp, fp, fn


def stable_rank(matrix) -> float:
    """||A||_F^2 / ||A||_2^2."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2:
        raise ValueError("stable rank needs a 2-D matrix")
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        raise ValueError("stable rank of a zero matrix is undefined")
    return float(np.sum(sv**2) / sv[0] ** 2)


def shannon_entropy(counts) -> float:
    """Entropy in bits of the normalized count vector."""
    c = np.asarray(counts, dtype=float).ravel()
    if np.any(c < 0):
        raise ValueError("counts must be nonnegative")
    total = c.sum()
    if total <= 0:
        raise ValueError("at least one count must be positive")
    p = c[c > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


# -- toy downstream classifier -------------------------------------------------

@dataclass(frozen=True)
class LogisticConfig:
    l2: float = 1e-2
    lr: float = 0.5
    iters: int = 500


def logistic_loss_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float):
    """Mean log-loss plus (l2/2)||w[1:]||^2; ``w[0]`` is the unpenalized bias."""
    z = w[0] + X @ w[1:]
    loss = np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * w[1:] @ w[1:]
    r = (1.0 / (1.0 + np.exp(-z)) - y) / y.size
    grad = np.concatenate(([r.sum()], X.T @ r + l2 * w[1:]))
    return float(loss), grad


def fit_logistic(X, y, cfg: LogisticConfig = LogisticConfig()) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(y).size < 2:
        raise ValueError("training set has a single class")
    w = np.zeros(X.shape[1] + 1)
    for _ in range(cfg.iters):
        _, g = logistic_loss_grad(w, X, y, cfg.l2)
        w -= cfg.lr * g
    return w


def predict_logistic(w, X) -> np.ndarray:
    return (w[0] + np.asarray(X, dtype=float) @ w[1:] > 0).astype(int)


def f1_binary(y_true, y_pred) -> float:
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    return prf_from_counts(tp, fp, fn).f1


def downstream_toy_eval(base_X, base_y, kept_X, kept_y, test_X, test_y,
                        cfg: LogisticConfig = LogisticConfig()) -> float:
    """Test F1 of a logistic model trained on base plus kept augmentations."""
    kept_X = np.asarray(kept_X, dtype=float).reshape(-1, np.asarray(base_X).shape[1])
    X = np.vstack([base_X, kept_X])
    y = np.concatenate([np.asarray(base_y, dtype=float), np.asarray(kept_y, dtype=float)])
    w = fit_logistic(X, y, cfg)
    return f1_binary(test_y, predict_logistic(w, test_X))


@dataclass(frozen=True)
class DownstreamSpec:
    """Imbalanced two-Gaussian task whose minority samples are augmented.

    Each minority sample gets ``K`` generations; a ``corrupt_frac`` share of them
    are corrupted: drawn around the majority mean yet labeled minority, with low
    gold quality.  Clean generations are small perturbations of their parent.
    """

    n_major: int = 400
    n_minor: int = 30
    n_cal: int = 15
    K: int = 10
    d: int = 2
    separation: float = 2.5
    jitter_sd: float = 0.5
    corrupt_frac: float = 0.5
    surrogate_noise_sd: float = 0.2
    n_test: int = 1000
    seed: int = 0


@dataclass
class DownstreamScenario:
    base_X: np.ndarray
    base_y: np.ndarray
    cal: list[SampleRecord]
    aug: list[SampleRecord]
    hidden_gold: dict[str, dict[str, float]]
    gen_features: dict[str, np.ndarray]
    test_X: np.ndarray
    test_y: np.ndarray
    extras: dict = field(default_factory=dict)

    def kept_training(self, decisions: Sequence[FilterDecision]):
        ids = [gid for d in decisions for gid in d.kept]
        if not ids:
            return np.empty((0, self.base_X.shape[1])), np.empty(0)
        return np.vstack([self.gen_features[g] for g in ids]), np.ones(len(ids))


def generate_downstream_scenario(spec: DownstreamSpec) -> DownstreamScenario:
    rng = np.random.default_rng(spec.seed)
    mu1 = np.zeros(spec.d)
    mu1[0] = spec.separation

    def draw(n, minority):
        return rng.standard_normal((n, spec.d)) + (mu1 if minority else 0.0)

    major = draw(spec.n_major, False)
    minor = draw(spec.n_minor, True)
    base_X = np.vstack([major, minor])
    base_y = np.concatenate([np.zeros(spec.n_major), np.ones(spec.n_minor)])
    n_test_minor = spec.n_test * spec.n_minor // (spec.n_major + spec.n_minor)
    test_X = np.vstack([draw(spec.n_test - n_test_minor, False), draw(n_test_minor, True)])
    test_y = np.concatenate([np.zeros(spec.n_test - n_test_minor), np.ones(n_test_minor)])

    records, hidden, feats = [], {}, {}
    n_bad = int(round(spec.corrupt_frac * spec.K))
    for i, x in enumerate(minor):
        sid = f"m-{i:05d}"
        bad = np.zeros(spec.K, dtype=bool)
        bad[rng.permutation(spec.K)[:n_bad]] = True
        gens = []
        for k in range(spec.K):
            gid = f"{sid}-g{k}"
            if bad[k]:
                feats[gid] = rng.standard_normal(spec.d)  # lands in the majority class
                gold = rng.beta(2.0, 6.0)
            else:
                feats[gid] = x + spec.jitter_sd * rng.standard_normal(spec.d)
                gold = rng.beta(6.0, 2.0)
            sur = float(np.clip(gold + spec.surrogate_noise_sd * rng.standard_normal(), 0.0, 1.0))
            gens.append(ScoredGeneration(gid, sur, float(gold)))
            hidden.setdefault(sid, {})[gid] = float(gold)
        records.append(SampleRecord(sid, tuple(x), "1", tuple(gens)))
    cal = records[: spec.n_cal]
    aug = [r.without_gold() for r in records[spec.n_cal:]]
    hidden_aug = {r.sample_id: hidden[r.sample_id] for r in aug}
    return DownstreamScenario(base_X, base_y, cal, aug, hidden_aug, feats, test_X, test_y)


# -- coverage studies ----------------------------------------------------------

def replicate_seed(seed: int, replicate: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(replicate)]).generate_state(1)[0])


def _summary(values) -> dict:
    v = np.asarray(values, dtype=float)
    q25, q50, q75 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"mean": float(v.mean()), "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
            "q25": float(q25), "median": float(q50), "q75": float(q75)}


@dataclass
class _Tally:
    hits: int = 0
    trials: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    region_hits: dict = field(default_factory=dict)
    region_trials: dict = field(default_factory=dict)
    replicate_coverage: list = field(default_factory=list)
    stable_ranks: list = field(default_factory=list)
    entropies: list = field(default_factory=list)


def run_coverage_study(spec: ScenarioSpec, replicates: int, strategies, config: FilterConfig,
                       workers: int = 1) -> list[dict]:
    """Replicate ``spec`` with derived seeds and report coverage and selection metrics per strategy.

    Stable rank is computed on the kept generations' feature rows (parent
    embedding plus surrogate) and entropy on the per-sample kept counts; both
    are averaged over replicates that keep anything.
    """
    from .pipeline import apply_calibration, calibrate, default_features, parse_strategy

    if replicates < 1:
        raise ValueError("replicates must be positive")
    strategies = [parse_strategy(s) if isinstance(s, str) else s for s in strategies]
    tallies = {str(s): _Tally() for s in strategies}
    for r in range(replicates):
        sc = generate_scenario(replace(spec, seed=replicate_seed(spec.seed, r)))
        calib = calibrate(sc.cal, config)
        by_id = {rec.sample_id: rec for rec in sc.aug}
        for strat in strategies:
            t = tallies[str(strat)]
            decisions = apply_calibration(calib, sc.aug, strat, workers)
            hits = 0
            for d in decisions:
                ok = realized_loss(d, sc.hidden_gold[d.sample_id], config.lam) <= config.rho
                reg = sc.regions[d.sample_id]
                hits += ok
                t.region_hits[reg] = t.region_hits.get(reg, 0) + ok
                t.region_trials[reg] = t.region_trials.get(reg, 0) + 1
            t.hits += hits
            t.trials += len(decisions)
            t.replicate_coverage.append(hits / len(decisions))
            tp, fp, fn = selection_counts(decisions, sc.hidden_gold, config.lam)
            t.tp += tp
            t.fp += fp
            t.fn += fn
            rows = [default_features(by_id[d.sample_id], g)
                    for d in decisions for g in by_id[d.sample_id].generations if g.gen_id in d.kept]
            if rows:
                t.stable_ranks.append(stable_rank(np.vstack(rows)))
                t.entropies.append(shannon_entropy([len(d.kept) for d in decisions]))
    reports = []
    for strat in strategies:
        t = tallies[str(strat)]
        prf = prf_from_counts(t.tp, t.fp, t.fn)
        reports.append({
            "strategy": str(strat),
            "alpha": config.alpha,
            "rho": config.rho,
            "lambda": config.lam,
            "n_trials": t.trials,
            "coverage": t.hits / t.trials,
            "per_region": {str(k): t.region_hits[k] / t.region_trials[k] for k in sorted(t.region_trials)},
            "per_region_trials": {str(k): t.region_trials[k] for k in sorted(t.region_trials)},
            "replicate_coverage": _summary(t.replicate_coverage),
            "precision": prf.precision,
            "recall": prf.recall,
            "f1": prf.f1,
            "prf_flags": list(prf.flags),
            "stable_rank": float(np.mean(t.stable_ranks)) if t.stable_ranks else None,
            "entropy": float(np.mean(t.entropies)) if t.entropies else None,
        })
    return reports


def downstream_f1(spec: DownstreamSpec, strategies, config: FilterConfig,
                  logistic: LogisticConfig = LogisticConfig()) -> dict[str, float]:
    """Toy-classifier test F1 after augmenting with each strategy's kept generations."""
    from .pipeline import parse_strategy, run_filter

    sc = generate_downstream_scenario(spec)
    out = {}
    for s in strategies:
        strat = parse_strategy(s) if isinstance(s, str) else s
        kx, ky = sc.kept_training(run_filter(sc.cal, sc.aug, strat, config))
        out[str(strat)] = downstream_toy_eval(sc.base_X, sc.base_y, kx, ky, sc.test_X, sc.test_y, logistic)
    return out
