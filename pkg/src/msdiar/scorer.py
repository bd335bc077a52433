"""Hypothesis timelines and diarization error rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .segmenter import MultiScaleSegmentSet
from .session_io import RttmTurn, merge_intervals, to_ms

Span = Tuple[int, int, int]  # start_ms, end_ms, cluster


@dataclass(frozen=True)
class DiarizationHypothesis:
    labels: np.ndarray
    spans: Tuple[Span, ...]

    def to_turns(self, recording_id: str, prefix: str = "spk") -> List[RttmTurn]:
        return [RttmTurn(recording_id, s, e - s, f"{prefix}{c}") for s, e, c in self.spans]


def _region_spans(rs: int, re: int, center2: np.ndarray, labels: np.ndarray) -> List[Span]:
    # frame t (covering [t, t+1) ms) goes to the nearest center; ties go to the earlier segment
    bounds = (center2[:-1] + center2[1:] - 2) // 4 + 1
    starts = np.concatenate(([rs], np.clip(bounds, rs, re)))
    ends = np.concatenate((np.clip(bounds, rs, re), [re]))
    return [(int(a), int(b), int(c)) for a, b, c in zip(starts, ends, labels) if b > a]


def merge_spans(spans: Iterable[Span]) -> List[Span]:
    out: List[list] = []
    for s, e, c in spans:
        if out and out[-1][1] == s and out[-1][2] == c:
            out[-1][1] = e
        else:
            out.append([s, e, c])
    return [tuple(x) for x in out]


def labels_to_timeline(msset: MultiScaleSegmentSet, labels) -> DiarizationHypothesis:
    """Give every speech millisecond the label of the base segment with the nearest center.

    Candidates are the base segments of the same speech region, or all base
    segments when the region has none.
    """
    labels = np.asarray(labels, dtype=np.int64)
    base = msset.base
    if len(labels) != len(base):
        raise ValueError(f"{len(labels)} labels for {len(base)} base segments")
    c2 = base.center2
    spans: List[Span] = []
    for r, (rs, re) in enumerate(msset.regions):
        idx = np.flatnonzero(base.region == r)
        if len(idx) == 0:
            idx = np.arange(len(base))
        spans.extend(_region_spans(rs, re, c2[idx], labels[idx]))
    return DiarizationHypothesis(labels, tuple(merge_spans(spans)))


# ---------------------------------------------------------------------------
# DER
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DerReport:
    miss: float
    false_alarm: float
    confusion: float
    total_speech: float
    collar: float = 0.0

    @property
    def der(self) -> float:
        if self.total_speech <= 0:
            return 0.0
        return (self.miss + self.false_alarm + self.confusion) / self.total_speech

    def __add__(self, other: "DerReport") -> "DerReport":
        return DerReport(
            self.miss + other.miss,
            self.false_alarm + other.false_alarm,
            self.confusion + other.confusion,
            self.total_speech + other.total_speech,
            self.collar,
        )

    def line(self) -> str:
        return (
            f"{self.miss:.3f} {self.false_alarm:.3f} {self.confusion:.3f} "
            f"{self.total_speech:.3f} {100 * self.der:.2f}"
        )


REPORT_HEADER = "MISS FA CONF TOTAL DER"


def aggregate(reports: Sequence[DerReport]) -> DerReport:
    out = DerReport(0.0, 0.0, 0.0, 0.0, reports[0].collar if reports else 0.0)
    for r in reports:
        out = out + r
    return out


def _activity(bounds: np.ndarray, intervals: Sequence[Tuple[int, int, int]], n_labels: int) -> np.ndarray:
    """(n_intervals, n_labels) count of active items per elementary interval."""
    delta = np.zeros((len(bounds), n_labels), dtype=np.int64)
    for s, e, k in intervals:
        delta[np.searchsorted(bounds, s), k] += 1
        delta[np.searchsorted(bounds, e), k] -= 1
    return np.cumsum(delta, axis=0)[:-1]


def no_score_zones(reference: Sequence[RttmTurn], collar_ms: int, score_overlap: bool) -> List[Tuple[int, int]]:
    zones = []
    if collar_ms > 0:
        for t in reference:
            for b in (t.onset_ms, t.end_ms):
                zones.append((max(0, b - collar_ms), b + collar_ms))
    if not score_overlap:
        # overlap means two distinct speakers; a speaker's own duplicate turns are merged first
        per_spk: dict = {}
        for t in reference:
            per_spk.setdefault(t.speaker_id, []).append((t.onset_ms, t.end_ms))
        ivs = [iv for spans in per_spk.values() for iv in merge_intervals(spans)]
        events = sorted([(s, 1) for s, _ in ivs] + [(e, -1) for _, e in ivs])
        depth = 0
        start = None
        for x, step in events:
            depth += step
            if depth >= 2 and start is None:
                start = x
            elif depth < 2 and start is not None:
                if x > start:
                    zones.append((start, x))
                start = None
    return zones


def der(
    reference: Sequence[RttmTurn],
    hypothesis,
    collar: float = 0.25,
    score_overlap: bool = False,
) -> DerReport:
    """Interval-arithmetic DER with an optimal one-to-one speaker/cluster map.

    ``hypothesis`` is a :class:`DiarizationHypothesis` or a list of
    ``(start_ms, end_ms, label)`` spans (or :class:`RttmTurn`).
    """
    reference = list(reference)
    if not reference:
        raise ValueError("empty reference")
    if collar < 0:
        raise ValueError("collar must be >= 0")
    rec_ids = {t.recording_id for t in reference}
    if len(rec_ids) != 1:
        raise ValueError(f"reference spans several recordings: {sorted(rec_ids)}")
    if isinstance(hypothesis, DiarizationHypothesis):
        hyp = list(hypothesis.spans)
    else:
        hyp = []
        for h in hypothesis:
            if isinstance(h, RttmTurn):
                if h.recording_id not in rec_ids:
                    raise ValueError(f"hypothesis recording {h.recording_id} differs from reference")
                hyp.append((h.onset_ms, h.end_ms, h.speaker_id))
            else:
                hyp.append(tuple(h))
    collar_ms = to_ms(collar)

    speakers = sorted({t.speaker_id for t in reference})
    clusters = sorted({h[2] for h in hyp}, key=str)
    spk_idx = {s: i for i, s in enumerate(speakers)}
    clu_idx = {c: i for i, c in enumerate(clusters)}
    ref_iv = [(t.onset_ms, t.end_ms, spk_idx[t.speaker_id]) for t in reference]
    hyp_iv = [(int(s), int(e), clu_idx[c]) for s, e, c in hyp if e > s]
    zones = no_score_zones(reference, collar_ms, score_overlap)

    points = {0}
    for s, e, _ in ref_iv + hyp_iv:
        points.update((s, e))
    for s, e in zones:
        points.update((s, e))
    bounds = np.array(sorted(points), dtype=np.int64)
    if len(bounds) < 2:
        return DerReport(0.0, 0.0, 0.0, 0.0, collar)
    dur = np.diff(bounds).astype(np.float64)

    ref_act = _activity(bounds, ref_iv, len(speakers)) > 0
    hyp_act = _activity(bounds, hyp_iv, max(1, len(clusters))) > 0
    excluded = _activity(bounds, [(s, e, 0) for s, e in zones], 1)[:, 0] > 0
    scored = dur * ~excluded

    # optimal mapping on scored time
    overlap = (ref_act * scored[:, None]).T.astype(np.float64) @ hyp_act.astype(np.float64)
    rows, cols = linear_sum_assignment(-overlap) if clusters else (np.array([], int), np.array([], int))
    mapped = np.full(len(speakers), -1, dtype=np.int64)
    for r, c in zip(rows, cols):
        if overlap[r, c] > 0:
            mapped[r] = c

    n_ref = ref_act.sum(axis=1)
    n_hyp = hyp_act.sum(axis=1)
    correct = np.zeros(len(dur), dtype=np.int64)
    for r in range(len(speakers)):
        if mapped[r] >= 0:
            correct += ref_act[:, r] & hyp_act[:, mapped[r]]
    miss = np.maximum(n_ref - n_hyp, 0)
    fa = np.maximum(n_hyp - n_ref, 0)
    conf = np.minimum(n_ref, n_hyp) - correct
    ms = 1000.0
    return DerReport(
        float(miss @ scored) / ms,
        float(fa @ scored) / ms,
        float(conf @ scored) / ms,
        float(n_ref @ scored) / ms,
        collar,
    )
