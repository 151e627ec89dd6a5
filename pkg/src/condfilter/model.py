"""Domain types shared across the filtering pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

RANDOMIZED = "randomized"
DETERMINISTIC = "deterministic"
SCORE_CONVENTIONS = ("infimum", "attained")


class DatasetError(ValueError):
    """Raised when a dataset fails validation; carries every violation found."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        head = "; ".join(self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"{len(self.violations)} violation(s): {head}{more}")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredGeneration:
    gen_id: str
    surrogate: float
    gold: Optional[float] = None
    smoothed_surrogate: Optional[float] = None

    @property
    def score(self) -> float:
        """Score used for filtering: the smoothed surrogate when one was learned."""
        if self.smoothed_surrogate is not None:
            return self.smoothed_surrogate
        return self.surrogate


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    embedding: tuple[float, ...]
    label: str
    generations: tuple[ScoredGeneration, ...]

    def __post_init__(self):
        object.__setattr__(self, "embedding", tuple(float(v) for v in self.embedding))
        object.__setattr__(self, "generations", tuple(self.generations))

    @property
    def dim(self) -> int:
        return len(self.embedding)

    @property
    def gen_ids(self) -> list[str]:
        return [g.gen_id for g in self.generations]

    def surrogates(self) -> np.ndarray:
        return np.array([g.score for g in self.generations], dtype=float)

    def raw_surrogates(self) -> np.ndarray:
        return np.array([g.surrogate for g in self.generations], dtype=float)

    def golds(self) -> np.ndarray:
        if not self.has_gold:
            raise DatasetError([f"{self.sample_id}: missing gold score"])
        return np.array([g.gold for g in self.generations], dtype=float)

    @property
    def has_gold(self) -> bool:
        return all(g.gold is not None for g in self.generations)

    def without_gold(self) -> "SampleRecord":
        gens = tuple(replace(g, gold=None) for g in self.generations)
        return replace(self, generations=gens)


@dataclass(frozen=True)
class FilterConfig:
    """Risk-control hyperparameters.

    ``lam`` is the gold quality threshold, ``rho`` the number of
    below-threshold generations tolerated per sample and ``alpha`` the
    miscoverage level.  ``gamma`` is the RKHS penalty of the kernel quantile
    regression and ``bandwidth`` the RBF parameter (``"auto"`` selects it by
    the median heuristic on the calibration embeddings).
    """

    lam: float = 0.5
    rho: int = 0
    alpha: float = 0.1
    gamma: float = 1.0
    bandwidth: Union[float, str] = "auto"
    randomization: str = RANDOMIZED
    rng_seed: int = 0
    bisection_tol: float = 1e-8
    solver_tol: float = 1e-8
    score_convention: str = "infimum"
    compute_gap: bool = True

    def __post_init__(self):
        problems = []
        if not (0.0 <= self.lam <= 1.0):
            problems.append(f"lam must lie in [0,1], got {self.lam}")
        if isinstance(self.rho, bool) or int(self.rho) != self.rho or self.rho < 0:
            problems.append(f"rho must be a nonnegative integer, got {self.rho}")
        if not (0.0 < self.alpha < 1.0):
            problems.append(f"alpha must lie in (0,1), got {self.alpha}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            problems.append(f"gamma must be positive, got {self.gamma}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "auto":
                problems.append(f"bandwidth must be positive or 'auto', got {self.bandwidth!r}")
        elif not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            problems.append(f"bandwidth must be positive, got {self.bandwidth}")
        if self.randomization not in (RANDOMIZED, DETERMINISTIC):
            problems.append(f"randomization must be randomized|deterministic, got {self.randomization!r}")
        if not (-(2**63) <= int(self.rng_seed) < 2**64):
            problems.append("rng_seed must fit in 64 bits")
        if not self.bisection_tol > 0:
            problems.append("bisection_tol must be positive")
        if not self.solver_tol > 0:
            problems.append("solver_tol must be positive")
        if self.score_convention not in SCORE_CONVENTIONS:
            problems.append(f"score_convention must be one of {SCORE_CONVENTIONS}")
        if problems:
            raise ConfigError("; ".join(problems))
        object.__setattr__(self, "rho", int(self.rho))
        object.__setattr__(self, "rng_seed", int(self.rng_seed))


@dataclass(frozen=True)
class FilterDecision:
    """Per-sample verdict.  ``cutoff`` is None when the decision was made on gold scores."""

    sample_id: str
    cutoff: Optional[float]
    kept: tuple[str, ...]
    dropped: tuple[str, ...]
    coverage_gap: Optional[float] = None
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "cutoff": _encode_float(self.cutoff),
            "kept": list(self.kept),
            "dropped": list(self.dropped),
            "coverage_gap": _encode_float(self.coverage_gap),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FilterDecision":
        return cls(
            sample_id=str(obj["sample_id"]),
            cutoff=_decode_float(obj.get("cutoff")),
            kept=tuple(obj.get("kept", ())),
            dropped=tuple(obj.get("dropped", ())),
            coverage_gap=_decode_float(obj.get("coverage_gap")),
        )


def _encode_float(x):
    if x is None:
        return None
    x = float(x)
    if math.isfinite(x):
        return x
    return "inf" if x > 0 else "-inf"


def _decode_float(x):
    if x is None:
        return None
    return float(x)


def decide(record: SampleRecord, cutoff: float, coverage_gap=None, diagnostics=None) -> FilterDecision:
    """Keep the generations whose filtering score is at least ``cutoff``."""
    kept, dropped = [], []
    for g in record.generations:
        (kept if g.score >= cutoff else dropped).append(g.gen_id)
    return FilterDecision(
        sample_id=record.sample_id,
        cutoff=float(cutoff),
        kept=tuple(kept),
        dropped=tuple(dropped),
        coverage_gap=coverage_gap,
        diagnostics=diagnostics or {},
    )


def _in_unit(x) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x) and 0.0 <= x <= 1.0


def validate_dataset(records: Sequence[SampleRecord], require_gold: bool = False) -> list[SampleRecord]:
    """Check every type invariant; return the records unchanged or raise DatasetError."""
    if not records:
        raise DatasetError(["dataset is empty"])
    violations = []
    dim = records[0].dim
    seen_samples = set()
    for rec in records:
        sid = rec.sample_id
        if sid in seen_samples:
            violations.append(f"{sid}: duplicate sample_id")
        seen_samples.add(sid)
        if rec.dim != dim:
            violations.append(f"{sid}: dimension mismatch (expected {dim}, got {rec.dim})")
        if rec.dim == 0:
            violations.append(f"{sid}: empty embedding")
        if not all(math.isfinite(v) for v in rec.embedding):
            violations.append(f"{sid}: non-finite embedding")
        if not rec.generations:
            violations.append(f"{sid}: no generations")
        gen_seen = set()
        for g in rec.generations:
            if g.gen_id in gen_seen:
                violations.append(f"{sid}/{g.gen_id}: duplicate gen_id")
            gen_seen.add(g.gen_id)
            if not _in_unit(g.surrogate):
                violations.append(f"{sid}/{g.gen_id}: surrogate score out of range [0,1]: {g.surrogate}")
            if g.gold is None:
                if require_gold:
                    violations.append(f"{sid}/{g.gen_id}: missing gold score")
            elif not _in_unit(g.gold):
                violations.append(f"{sid}/{g.gen_id}: gold score out of range [0,1]: {g.gold}")
            if g.smoothed_surrogate is not None and not math.isfinite(g.smoothed_surrogate):
                violations.append(f"{sid}/{g.gen_id}: non-finite smoothed surrogate")
    if violations:
        raise DatasetError(violations)
    return list(records)


def embeddings_of(records: Sequence[SampleRecord]) -> np.ndarray:
    return np.array([r.embedding for r in records], dtype=float).reshape(len(records), -1)
