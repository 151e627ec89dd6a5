"""RBF kernel, Gram matrices, bandwidth selection and PCA conditioning features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist, pdist


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float
    family: str = "rbf"

    def __post_init__(self):
        if self.family != "rbf":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if not (self.bandwidth > 0 and np.isfinite(self.bandwidth)):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    def cross(self, a, b) -> np.ndarray:
        """Kernel matrix between the rows of ``a`` and the rows of ``b``."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        if a.shape[1] != b.shape[1]:
            raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
        return np.exp(-self.bandwidth * cdist(a, b, "sqeuclidean"))


def rbf_eval(x, y, xi: float) -> float:
    """exp(-xi * ||x - y||^2)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    if not xi > 0:
        raise ValueError(f"bandwidth must be positive, got {xi}")
    d = x - y
    return float(np.exp(-xi * np.dot(d, d)))


def gram(anchors, spec: KernelSpec) -> np.ndarray:
    a = np.asarray(anchors, dtype=float)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("anchors must be a nonempty 2-D array of equal-length embeddings")
    k = spec.cross(a, a)
    # cdist is not bitwise symmetric; symmetrize and pin the unit diagonal
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, 1.0)
    return k


def median_heuristic_bandwidth(anchors) -> float:
    """xi = 1 / median of pairwise squared distances."""
    a = np.asarray(anchors, dtype=float)
    if a.ndim != 2 or a.shape[0] < 2:
        raise ValueError("need at least two anchors")
    med = float(np.median(pdist(a, "sqeuclidean")))
    if med <= 0.0:
        raise ValueError("median pairwise distance is zero (anchors identical)")
    return 1.0 / med


class PCAResult(NamedTuple):
    basis: np.ndarray  # features x target_dim, orthonormal columns
    projected: np.ndarray  # samples x target_dim
    eigenvalues: np.ndarray  # leading covariance eigenvalues, decreasing
    mean: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.atleast_2d(np.asarray(x, dtype=float)) - self.mean) @ self.basis


def pca_reduce(matrix, target_dim: int) -> PCAResult:
    x = np.asarray(matrix, dtype=float)
    if x.ndim != 2:
        raise ValueError("matrix must be 2-D")
    n, p = x.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if not 1 <= target_dim <= min(n, p):
        raise ValueError(f"target_dim must lie in [1, {min(n, p)}], got {target_dim}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1][:target_dim]
    vals, vecs = vals[order], vecs[:, order]
    for j in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, j]) > 1e-12)
        if nz.size and vecs[nz[0], j] < 0:
            vecs[:, j] = -vecs[:, j]
    return PCAResult(basis=vecs, projected=xc @ vecs, eigenvalues=np.clip(vals, 0.0, None), mean=mean)
