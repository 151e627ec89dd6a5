"""False-inclusion loss and per-sample nonconformity scores."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .model import FilterConfig, SampleRecord

# loss(selected_indices, gold_scores, lam) -> nonnegative real.  Must be
# monotone under set inclusion and vanish on the empty selection.
MonotoneLoss = Callable[[np.ndarray, np.ndarray, float], float]


def count_below(selected: np.ndarray, golds: np.ndarray, lam: float) -> int:
    """Number of selected generations whose gold score falls below ``lam``."""
    return int(np.count_nonzero(golds[selected] < lam))


def _pair(surrogates, golds):
    s = np.asarray(surrogates, dtype=float).ravel()
    g = np.asarray(golds, dtype=float).ravel()
    if s.shape != g.shape:
        raise ValueError(f"length mismatch: {s.size} surrogates vs {g.size} gold scores")
    return s, g


def false_inclusion_loss(surrogates, golds, s: float, lam: float) -> int:
    """|{k : surrogates[k] >= s and golds[k] < lam}|."""
    sur, gold = _pair(surrogates, golds)
    return count_below(np.flatnonzero(sur >= s), gold, lam)


def score_grid(surrogates) -> np.ndarray:
    """Distinct surrogate values in increasing order plus the empty-selection sentinel."""
    sur = np.unique(np.asarray(surrogates, dtype=float))
    return np.append(sur, sur[-1] + 1.0)


def nonconformity_score(
    surrogates,
    golds,
    lam: float,
    rho: int,
    loss: Optional[MonotoneLoss] = None,
    convention: str = "attained",
) -> float:
    """Smallest safe filtering threshold for one sample.

    With ``convention="attained"`` this is the smallest value of
    :func:`score_grid` whose selection incurs loss at most ``rho``.  The
    ``"infimum"`` convention returns the infimum over all real thresholds
    instead: the grid value just below the attained one, i.e. the largest
    surrogate whose selection still violates the tolerance, or
    ``min(surrogates) - 1`` when no threshold violates it.  A cutoff ``c``
    satisfies the tolerance exactly when ``c > infimum``.
    """
    sur, gold = _pair(surrogates, golds)
    if sur.size == 0:
        raise ValueError("empty generation list")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    loss = loss or count_below
    grid = score_grid(sur)
    # loss is nonincreasing along the grid; scan from the top for the first violation
    j = grid.size - 1
    while j > 0 and loss(np.flatnonzero(sur >= grid[j - 1]), gold, lam) <= rho:
        j -= 1
    if convention == "attained":
        return float(grid[j])
    if convention == "infimum":
        return float(grid[j - 1]) if j > 0 else float(grid[0] - 1.0)
    raise ValueError(f"unknown convention {convention!r}")


def score_calibration_set(
    records: Sequence[SampleRecord], config: FilterConfig, loss: Optional[MonotoneLoss] = None
) -> list[tuple[str, float]]:
    out = []
    for rec in records:
        if not rec.has_gold:
            raise ValueError(f"{rec.sample_id}: calibration record lacks gold scores")
        out.append(
            (
                rec.sample_id,
                nonconformity_score(
                    rec.surrogates(), rec.golds(), config.lam, config.rho, loss, config.score_convention
                ),
            )
        )
    return out
