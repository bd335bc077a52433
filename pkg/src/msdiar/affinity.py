"""Per-scale cosine affinities over base-segment pairs and their weighted fusion."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .segmenter import MultiScaleSegmentSet
from .session_io import EmbeddingMatrix

# order of the six NASF-D weight vectors
BLOCK_PAIRS: Tuple[Tuple[int, int], ...] = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


class ConstantAffinityWarning(UserWarning):
    pass


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine of a zero-norm vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def cosine_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero-norm embedding at rows {np.flatnonzero(norms == 0).tolist()}")
    Xn = X / norms[:, None]
    K = Xn @ Xn.T
    np.clip(K, -1.0, 1.0, out=K)
    return K


def minmax_normalize(M: np.ndarray) -> np.ndarray:
    """Map off-diagonal entries affinely onto [0, 1]; the diagonal becomes 1.

    A matrix whose off-diagonal entries are all equal cannot be stretched; its
    off-diagonals become 0.5 and a :class:`ConstantAffinityWarning` is issued.
    """
    M = np.array(M, dtype=np.float64)
    L = M.shape[0]
    if M.shape != (L, L):
        raise ValueError(f"square matrix required, got {M.shape}")
    out = np.ones_like(M)
    if L < 2:
        return out
    off = ~np.eye(L, dtype=bool)
    lo = M[off].min()
    hi = M[off].max()
    if hi - lo <= 0:
        warnings.warn("constant off-diagonal affinity; using 0.5", ConstantAffinityWarning)
        out[off] = 0.5
        return out
    out[off] = (M[off] - lo) / (hi - lo)
    return out


@dataclass(frozen=True)
class AffinityTensor:
    """``C[s]`` is the normalized base-pair affinity at scale ``s``."""

    C: np.ndarray

    @property
    def n_scales(self) -> int:
        return self.C.shape[0]

    @property
    def L(self) -> int:
        return self.C.shape[1]


def _scale_rows(msset: MultiScaleSegmentSet, embeddings: Sequence[EmbeddingMatrix]) -> List[np.ndarray]:
    if len(embeddings) != msset.n_scales:
        raise ValueError(f"expected {msset.n_scales} embedding matrices, got {len(embeddings)}")
    out = []
    for s, emb in enumerate(embeddings):
        rows = emb.rows if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
        n = len(msset.per_scale[s])
        if rows.ndim != 2 or rows.shape[0] != n:
            raise ValueError(f"scale {s}: {rows.shape[0]} embedding rows for {n} segments")
        out.append(rows)
    dims = {x.shape[1] for x in out}
    if len(dims) != 1:
        raise ValueError(f"embedding dims differ across scales: {sorted(dims)}")
    return out


def mapped_embeddings(msset: MultiScaleSegmentSet, embeddings: Sequence[EmbeddingMatrix]) -> List[np.ndarray]:
    """Per scale, the (L, dim) embedding rows of the segments mapped from the base scale."""
    rows = _scale_rows(msset, embeddings)
    return [r[msset.mapping[:, s]] for s, r in enumerate(rows)]


def raw_cosine_tensor(msset: MultiScaleSegmentSet, embeddings: Sequence[EmbeddingMatrix]) -> np.ndarray:
    rows = _scale_rows(msset, embeddings)
    L = msset.n_base
    raw = np.empty((msset.n_scales, L, L))
    for s, r in enumerate(rows):
        K = cosine_matrix(r)
        idx = msset.mapping[:, s]
        raw[s] = K[np.ix_(idx, idx)]
    return raw


def build_affinity_tensor(msset: MultiScaleSegmentSet, embeddings: Sequence[EmbeddingMatrix]) -> AffinityTensor:
    raw = raw_cosine_tensor(msset, embeddings)
    C = np.stack([minmax_normalize(m) for m in raw])
    C.setflags(write=False)
    return AffinityTensor(C)


def _check_weight(w, S: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (S,):
        raise ValueError(f"weight vector of length {S} required, got shape {w.shape}")
    return w


def _weighted_sum(w: np.ndarray, C: np.ndarray) -> np.ndarray:
    # fixed summation order so block-wise and whole-matrix fusion agree bit for bit
    out = w[0] * C[0]
    for s in range(1, len(w)):
        out = out + w[s] * C[s]
    return out


def fuse(tensor: AffinityTensor, w) -> np.ndarray:
    w = _check_weight(w, tensor.n_scales)
    return _weighted_sum(w, tensor.C)


def block_split(L: int, n_blocks: int = 3) -> List[Tuple[int, int]]:
    """Contiguous ``[start, end)`` index ranges; leftover items go to the earliest blocks."""
    if L < n_blocks:
        raise ValueError(f"cannot split {L} segments into {n_blocks} blocks")
    q, r = divmod(L, n_blocks)
    out, start = [], 0
    for b in range(n_blocks):
        size = q + (1 if b < r else 0)
        out.append((start, start + size))
        start += size
    return out


def fuse_blockwise(tensor: AffinityTensor, weights: Sequence, split: Sequence[Tuple[int, int]]) -> np.ndarray:
    """Fuse each (block, block) region with its own weight vector.

    ``weights`` follow :data:`BLOCK_PAIRS`: three intra-block vectors, then the
    inter-block pairs (0,1), (0,2), (1,2).
    """
    if len(weights) != len(BLOCK_PAIRS):
        raise ValueError(f"expected {len(BLOCK_PAIRS)} weight vectors, got {len(weights)}")
    split = [tuple(map(int, r)) for r in split]
    if len(split) != 3:
        raise ValueError("split must have 3 ranges")
    expect = 0
    for a, b in split:
        if a != expect or b <= a:
            raise ValueError(f"ranges {split} do not partition 0..{tensor.L}")
        expect = b
    if expect != tensor.L:
        raise ValueError(f"ranges {split} do not partition 0..{tensor.L}")
    out = np.empty((tensor.L, tensor.L))
    for (bi, bj), w in zip(BLOCK_PAIRS, weights):
        w = _check_weight(w, tensor.n_scales)
        ri = slice(*split[bi])
        rj = slice(*split[bj])
        block = _weighted_sum(w, tensor.C[:, ri, rj])
        out[ri, rj] = block
        out[rj, ri] = block.T
    return out


def format_matrix(M: np.ndarray) -> str:
    lines = [f"{M.shape[0]}\n"]
    lines.extend(" ".join(f"{x:.6f}" for x in row) + "\n" for row in M)
    return "".join(lines)
