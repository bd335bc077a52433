"""Hot inner loops.

Every kernel has two implementations with identical semantics: a ``*_loop``
version compiled by numba and a vectorized ``*_numpy`` version. The public
name dispatches on :data:`msdiar._accel.USE_NUMBA`. Both are importable so the
benchmark and the tests can exercise them side by side.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

_CHUNK = 4096


# ---------------------------------------------------------------------------
# interval overlap: seconds of each speaker inside each segment
# ---------------------------------------------------------------------------


@njit
def overlap_durations_loop(seg_start, seg_end, turn_start, turn_end, turn_spk, n_spk):
    n_seg = seg_start.shape[0]
    out = np.zeros((n_seg, n_spk), dtype=np.int64)
    for i in range(n_seg):
        s = seg_start[i]
        e = seg_end[i]
        for j in range(turn_start.shape[0]):
            # turns are sorted by onset
            if turn_start[j] >= e:
                break
            lo = s if s > turn_start[j] else turn_start[j]
            hi = e if e < turn_end[j] else turn_end[j]
            if hi > lo:
                out[i, turn_spk[j]] += hi - lo
    return out


def overlap_durations_numpy(seg_start, seg_end, turn_start, turn_end, turn_spk, n_spk):
    seg_start = np.asarray(seg_start, dtype=np.int64)
    seg_end = np.asarray(seg_end, dtype=np.int64)
    onehot = np.zeros((len(turn_start), n_spk), dtype=np.int64)
    onehot[np.arange(len(turn_start)), turn_spk] = 1
    out = np.zeros((len(seg_start), n_spk), dtype=np.int64)
    for a in range(0, len(seg_start), _CHUNK):
        s = seg_start[a : a + _CHUNK, None]
        e = seg_end[a : a + _CHUNK, None]
        ov = np.minimum(e, turn_end[None, :]) - np.maximum(s, turn_start[None, :])
        np.clip(ov, 0, None, out=ov)
        out[a : a + _CHUNK] = ov @ onehot
    return out


def overlap_durations(seg_start, seg_end, turn_start, turn_end, turn_spk, n_spk):
    """(n_seg, n_spk) matrix of overlap in integer ms.

    Turns must be sorted by onset.
    """
    args = (
        np.ascontiguousarray(seg_start, dtype=np.int64),
        np.ascontiguousarray(seg_end, dtype=np.int64),
        np.ascontiguousarray(turn_start, dtype=np.int64),
        np.ascontiguousarray(turn_end, dtype=np.int64),
        np.ascontiguousarray(turn_spk, dtype=np.int64),
        int(n_spk),
    )
    if USE_NUMBA:
        return overlap_durations_loop(*args)
    return overlap_durations_numpy(*args)


# ---------------------------------------------------------------------------
# nearest center mapping
# ---------------------------------------------------------------------------


@njit
def nearest_center_loop(query, query_region, ref, ref_region):
    n = query.shape[0]
    m = ref.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        r = query_region[i]
        lo = np.searchsorted(ref_region, r, side="left")
        hi = np.searchsorted(ref_region, r, side="right")
        if lo == hi:
            lo = 0
            hi = m
        # first candidate >= query, by bisection inside [lo, hi)
        a = lo
        b = hi
        while a < b:
            mid = (a + b) // 2
            if ref[mid] < query[i]:
                a = mid + 1
            else:
                b = mid
        left = max(a - 1, lo)
        right = min(a, hi - 1)
        if abs(ref[right] - query[i]) < abs(ref[left] - query[i]):
            out[i] = right
        else:
            out[i] = left
    return out


def nearest_center_numpy(query, query_region, ref, ref_region):
    lo = np.searchsorted(ref_region, query_region, side="left")
    hi = np.searchsorted(ref_region, query_region, side="right")
    empty = lo == hi
    lo = np.where(empty, 0, lo)
    hi = np.where(empty, len(ref), hi)
    pos = np.searchsorted(ref, query, side="left")
    left = np.clip(pos - 1, lo, hi - 1)
    right = np.clip(pos, lo, hi - 1)
    d_left = np.abs(ref[left] - query)
    d_right = np.abs(ref[right] - query)
    # ties go to the earlier reference
    return np.where(d_right < d_left, right, left).astype(np.int64)


def nearest_center(query, query_region, ref, ref_region):
    """Index of the nearest ``ref`` center for every ``query`` center.

    Centers are integers, sorted ascending, with region ids non-decreasing
    along them. The search is restricted to the query's region; when that
    region holds no reference, all references are candidates. Ties resolve
    to the lower index.
    """
    args = tuple(
        np.ascontiguousarray(a, dtype=np.int64)
        for a in (query, query_region, ref, ref_region)
    )
    if len(args[2]) == 0:
        raise ValueError("no reference centers")
    if USE_NUMBA:
        return nearest_center_loop(*args)
    return nearest_center_numpy(*args)


# ---------------------------------------------------------------------------
# top-p row binarization
# ---------------------------------------------------------------------------


@njit
def topp_binarize_loop(A, p):
    n = A.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    k = min(p, n)
    for i in range(n):
        row = -A[i].copy()
        row[i] = -np.inf
        kth = np.partition(row, k - 1)[k - 1]
        taken = 0
        for j in range(n):
            if row[j] < kth:
                out[i, j] = 1.0
                taken += 1
        # ties at the threshold fill the remaining slots in column order
        for j in range(n):
            if taken == k:
                break
            if row[j] == kth:
                out[i, j] = 1.0
                taken += 1
    return out


def topp_binarize_numpy(A, p):
    n = A.shape[0]
    k = min(p, n)
    neg = -np.array(A, dtype=np.float64)
    np.fill_diagonal(neg, -np.inf)
    order = np.argsort(neg, axis=1, kind="stable")[:, :k]
    out = np.zeros((n, n), dtype=np.float64)
    np.put_along_axis(out, order, 1.0, axis=1)
    return out


def topp_binarize(A, p):
    """Row-wise top-``p`` indicator; self is always kept, ties go to lower column."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if USE_NUMBA:
        return topp_binarize_loop(A, int(p))
    return topp_binarize_numpy(A, int(p))


# ---------------------------------------------------------------------------
# NASF head over sampled pairs
# ---------------------------------------------------------------------------


@njit
def pair_softmax_sum_loop(M, W, b, I, J):
    n_pairs = I.shape[0]
    S, F = W.shape
    acc = np.zeros(S, dtype=np.float64)
    z = np.empty(S, dtype=np.float64)
    u = np.empty(F, dtype=np.float64)
    for n in range(n_pairs):
        a = I[n]
        c = J[n]
        for f in range(F):
            u[f] = abs(M[a, f] - M[c, f])
        for s in range(S):
            t = b[s]
            for f in range(F):
                t += W[s, f] * u[f]
            z[s] = t
        zmax = z.max()
        tot = 0.0
        for s in range(S):
            z[s] = np.exp(z[s] - zmax)
            tot += z[s]
        for s in range(S):
            acc[s] += z[s] / tot
    return acc


def pair_softmax_sum_numpy(M, W, b, I, J):
    acc = np.zeros(W.shape[0], dtype=np.float64)
    for a in range(0, len(I), _CHUNK):
        U = np.abs(M[I[a : a + _CHUNK]] - M[J[a : a + _CHUNK]])
        Z = U @ W.T + b
        Z -= Z.max(axis=1, keepdims=True)
        np.exp(Z, out=Z)
        Z /= Z.sum(axis=1, keepdims=True)
        acc += Z.sum(axis=0)
    return acc


def pair_softmax_sum(M, W, b, I, J):
    """Sum over pairs n of ``softmax(W @ |M[I[n]] - M[J[n]]| + b)``."""
    args = (
        np.ascontiguousarray(M, dtype=np.float64),
        np.ascontiguousarray(W, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
        np.ascontiguousarray(I, dtype=np.int64),
        np.ascontiguousarray(J, dtype=np.int64),
    )
    if USE_NUMBA:
        return pair_softmax_sum_loop(*args)
    return pair_softmax_sum_numpy(*args)
