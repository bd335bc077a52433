"""Speaker label vectors and ground-truth pair affinities for NASF training."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from . import kernels
from .segmenter import ScaleSegments, Segment
from .session_io import RttmTurn, merge_intervals

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairLabel:
    i: int
    j: int
    d: float


def speaker_list(turns: Sequence[RttmTurn]) -> List[str]:
    return sorted({t.speaker_id for t in turns})


def _turn_arrays(turns: Sequence[RttmTurn], speakers: Sequence[str]):
    index = {spk: k for k, spk in enumerate(speakers)}
    per_spk: dict = {}
    for t in turns:
        if t.speaker_id not in index:
            raise ValueError(f"speaker {t.speaker_id!r} missing from speaker list")
        per_spk.setdefault(index[t.speaker_id], []).append((t.onset_ms, t.end_ms))
    # a speaker's own overlapping turns count once
    items = sorted((s, e, k) for k, iv in per_spk.items() for s, e in merge_intervals(iv))
    arr = np.array(items, dtype=np.int64).reshape(-1, 3)
    return arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()


def label_matrix(
    seg_start_ms, seg_end_ms, turns: Sequence[RttmTurn], speakers: Sequence[str]
) -> np.ndarray:
    """(n_seg, K) speaker durations in seconds; row i is segment i's label vector."""
    onset, end, spk = _turn_arrays(turns, speakers)
    ms = kernels.overlap_durations(seg_start_ms, seg_end_ms, onset, end, spk, len(speakers))
    return ms / 1000.0


def label_vector(seg: Segment, turns: Sequence[RttmTurn], speakers: Sequence[str]) -> np.ndarray:
    return label_matrix([seg.start_ms], [seg.end_ms], turns, speakers)[0]


def segment_labels(segments: ScaleSegments, turns: Sequence[RttmTurn], speakers: Sequence[str] = None) -> np.ndarray:
    speakers = speaker_list(turns) if speakers is None else speakers
    return label_matrix(segments.start_ms, segments.end_ms, turns, speakers)


def pair_label_arrays(V: np.ndarray, I: np.ndarray, J: np.ndarray):
    """Vectorized pair labels; returns ``(I, J, d)`` with zero-vector pairs removed."""
    V = np.asarray(V, dtype=np.float64)
    I = np.asarray(I, dtype=np.int64)
    J = np.asarray(J, dtype=np.int64)
    if np.any(I == J):
        raise ValueError("pair with i == j")
    norms = np.linalg.norm(V, axis=1)
    keep = (norms[I] > 0) & (norms[J] > 0)
    dropped = int(len(I) - keep.sum())
    if dropped:
        logger.info("dropped %d of %d pairs with a zero label vector", dropped, len(I))
    I, J = I[keep], J[keep]
    d = np.einsum("nk,nk->n", V[I], V[J]) / (norms[I] * norms[J])
    np.clip(d, 0.0, 1.0, out=d)
    return I, J, d


def pair_labels(vectors: Sequence, pairs: Sequence[Tuple[int, int]]) -> List[PairLabel]:
    if not len(pairs):
        return []
    V = np.asarray(vectors, dtype=np.float64)
    P = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    I, J, d = pair_label_arrays(V, P[:, 0], P[:, 1])
    return [PairLabel(int(i), int(j), float(x)) for i, j, x in zip(I, J, d)]


def n_pairs(L: int) -> int:
    return L * (L - 1) // 2


def pair_from_index(k, L: int):
    """Decode row-major indices of the strict upper triangle into (i, j)."""
    k = np.asarray(k, dtype=np.int64)
    rows = np.arange(L - 1, dtype=np.int64)
    offsets = rows * L - rows * (rows + 1) // 2
    i = np.searchsorted(offsets, k, side="right") - 1
    j = k - offsets[i] + i + 1
    return i, j


def sample_pair_arrays(L: int, N: int, rng) -> Tuple[np.ndarray, np.ndarray]:
    if L < 2:
        raise ValueError(f"need at least 2 segments to form pairs, got {L}")
    rng = np.random.default_rng(rng)
    total = n_pairs(L)
    if N >= total:
        k = np.arange(total, dtype=np.int64)
    else:
        k = np.sort(rng.choice(total, size=N, replace=False))
    return pair_from_index(k, L)


def sample_pairs(L: int, N: int, seed=0) -> List[Tuple[int, int]]:
    """``N`` distinct unordered pairs ``(i < j)`` drawn uniformly, or all pairs if fewer exist."""
    I, J = sample_pair_arrays(L, N, seed)
    return list(zip(I.tolist(), J.tolist()))


def format_pair_labels(labels: Sequence[PairLabel]) -> str:
    return "".join(f"{p.i} {p.j} {p.d:.6f}\n" for p in labels)
