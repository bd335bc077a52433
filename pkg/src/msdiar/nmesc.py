"""Normalized maximum eigengap spectral clustering (NME-SC).

For each candidate neighbour count p the affinity is binarized row-wise,
symmetrized, and the eigengaps of its graph Laplacian are inspected. The p
with the smallest ratio of p/L to the normalized maximum eigengap wins; the
position of that gap gives the speaker count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import kernels

logger = logging.getLogger(__name__)

EPS = 1e-10
DEFAULT_K_MAX = 8
MAX_P_CANDIDATES = 100


class DegenerateAffinityError(ValueError):
    pass


@dataclass(frozen=True)
class PTrace:
    p: int
    gap: float  # normalized maximum eigengap
    ratio: float
    k: int


@dataclass
class ClusterResult:
    k: int
    labels: np.ndarray
    p: int
    trace: List[PTrace] = field(default_factory=list)


def binarize(A: np.ndarray, p: int) -> np.ndarray:
    """Top-p row binarization followed by ``(B0 + B0.T) / 2``."""
    B0 = kernels.topp_binarize(A, p)
    return 0.5 * (B0 + B0.T)


def laplacian(B: np.ndarray) -> np.ndarray:
    B = np.array(B, dtype=np.float64)
    np.fill_diagonal(B, 0.0)
    return np.diag(B.sum(axis=1)) - B


def default_p_grid(L: int, max_candidates: int = MAX_P_CANDIDATES) -> List[int]:
    hi = L // 2
    if hi < 2:
        return []
    grid = np.arange(2, hi + 1)
    if len(grid) > max_candidates:
        grid = np.unique(np.round(np.linspace(2, hi, max_candidates)).astype(int))
    return grid.tolist()


def eigengap_analysis(lambdas: np.ndarray, k_max: int):
    """Return (k, normalized max gap) from ascending eigenvalues."""
    L = len(lambdas)
    if lambdas[-1] <= EPS:
        # no edges at all: every node is its own component
        return min(L, k_max), 0.0
    gaps = np.diff(lambdas)[: min(k_max, L - 1)]
    k_idx = int(np.argmax(gaps))
    return k_idx + 1, float(gaps[k_idx] / (lambdas[-1] + EPS))


def _check_affinity(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"square affinity required, got {A.shape}")
    if A.shape[0] < 2:
        raise ValueError("need at least 2 segments")
    if not np.all(np.isfinite(A)):
        raise ValueError("non-finite affinity")
    if not np.any(A):
        raise DegenerateAffinityError("all-zero affinity matrix")
    return A


def nme_search(A: np.ndarray, p_grid: Optional[Sequence[int]] = None, k_max: int = DEFAULT_K_MAX):
    """Pick the binarization p and speaker count k. Returns ``(p, k, trace)``.

    ``p = 0`` in the result signals the small-session fallback used when the
    grid is empty (L < 4): k is the number of connected components of the
    graph ``A >= 0.5``.
    """
    A = _check_affinity(A)
    L = A.shape[0]
    grid = default_p_grid(L) if p_grid is None else [int(p) for p in p_grid]
    if not grid:
        n_comp, _ = connected_components(A >= 0.5, directed=False)
        return 0, min(int(n_comp), k_max), []
    trace = []
    for p in grid:
        lambdas = np.linalg.eigvalsh(laplacian(binarize(A, p)))
        k, gap = eigengap_analysis(lambdas, k_max)
        ratio = (p / L) / (gap + EPS)
        trace.append(PTrace(p, gap, ratio, k))
    best = min(range(len(trace)), key=lambda i: trace[i].ratio)
    return trace[best].p, trace[best].k, trace


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _sq_dist(X, C):
    d = (X * X).sum(1)[:, None] - 2 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = _sq_dist(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        closest = np.minimum(closest, _sq_dist(X, centers[c : c + 1])[:, 0])
    return centers


def _lloyd(X, centers, max_iter, tol):
    k = centers.shape[0]
    labels = np.zeros(X.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        D = _sq_dist(X, centers)
        labels = np.argmin(D, axis=1)
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
            else:
                # re-seed an emptied centroid at the point farthest from its center
                far = int(np.argmax(D[np.arange(len(X)), labels]))
                new[c] = X[far]
                labels[far] = c
        shift = float(((new - centers) ** 2).sum())
        centers = new
        if shift <= tol:
            break
    D = _sq_dist(X, centers)
    labels = np.argmin(D, axis=1)
    inertia = float(D[np.arange(len(X)), labels].sum())
    return labels, centers, inertia


def kmeans(X: np.ndarray, k: int, n_init: int = 10, seed=0, max_iter: int = 300, tol: float = 1e-10) -> np.ndarray:
    """k-means++ seeded Lloyd iterations, best inertia over ``n_init`` restarts."""
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, _, inertia = _lloyd(X, _kmeanspp(X, k, rng), max_iter, tol)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    return canonical_labels(best[0])


def canonical_labels(labels) -> np.ndarray:
    """Rename clusters by order of first appearance."""
    labels = np.asarray(labels)
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    remap = {int(old): new for new, old in enumerate(order)}
    return np.array([remap[int(x)] for x in labels], dtype=np.int64)


def spectral_embedding(A: np.ndarray, p: int, k: int) -> np.ndarray:
    lambdas, vecs = np.linalg.eigh(laplacian(binarize(A, p)))
    if not np.all(np.isfinite(lambdas)):
        raise np.linalg.LinAlgError("eigendecomposition produced non-finite values")
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    return emb / np.where(norms > 0, norms, 1.0)


def spectral_cluster(A: np.ndarray, p: int, k: int, seed=0, n_init: int = 10) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    L = np.asarray(A).shape[0]
    if k == 1 or L == 1:
        return np.zeros(L, dtype=np.int64)
    if k >= L:
        return np.arange(L, dtype=np.int64)
    return kmeans(spectral_embedding(A, p, k), k, n_init=n_init, seed=seed)


def nmesc(
    A: np.ndarray,
    p_grid: Optional[Sequence[int]] = None,
    k_max: int = DEFAULT_K_MAX,
    seed=0,
    n_init: int = 10,
) -> ClusterResult:
    A = np.asarray(A, dtype=np.float64)
    if A.shape[0] == 1:
        return ClusterResult(1, np.zeros(1, dtype=np.int64), 0, [])
    p, k, trace = nme_search(A, p_grid, k_max)
    if p == 0:
        _, comp = connected_components(A >= 0.5, directed=False)
        if comp.max() + 1 > k_max:
            comp = np.minimum(comp, k_max - 1)
        return ClusterResult(k, canonical_labels(comp), p, trace)
    labels = spectral_cluster(A, p, k, seed=seed, n_init=n_init)
    return ClusterResult(int(labels.max()) + 1, labels, p, trace)


def format_trace(trace: Sequence[PTrace]) -> str:
    return "".join(f"{t.p} {t.gap:.6g} {t.ratio:.6g} {t.k}\n" for t in trace)
