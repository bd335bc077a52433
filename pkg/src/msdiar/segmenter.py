"""Uniform multi-scale segmentation and base-to-coarse segment mapping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from . import kernels
from .session_io import SpeechRegionList, to_ms


class DegenerateSessionError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleConfig:
    window_ms: int
    hop_ms: int
    min_len_ms: int

    def __post_init__(self):
        if self.window_ms <= 0 or self.hop_ms <= 0:
            raise ValueError("window and hop must be positive")
        if not 0 < self.min_len_ms <= self.window_ms:
            raise ValueError("need 0 < min_len <= window")

    @classmethod
    def from_seconds(cls, window: float, hop: float = None, min_len: float = None):
        hop = window / 2 if hop is None else hop
        min_len = window if min_len is None else min_len
        return cls(to_ms(window), to_ms(hop), to_ms(min_len))

    @property
    def window(self) -> float:
        return self.window_ms / 1000.0

    @property
    def hop(self) -> float:
        return self.hop_ms / 1000.0

    @property
    def min_len(self) -> float:
        return self.min_len_ms / 1000.0


# coarse -> fine; the last entry is the base scale
DEFAULT_SCALES: Tuple[ScaleConfig, ...] = (
    ScaleConfig(1500, 750, 500),
    ScaleConfig(1000, 500, 250),
    ScaleConfig(500, 250, 170),
)


@dataclass(frozen=True)
class Segment:
    scale_id: int
    start_ms: int
    end_ms: int

    @property
    def start(self) -> float:
        return self.start_ms / 1000.0

    @property
    def end(self) -> float:
        return self.end_ms / 1000.0

    @property
    def center(self) -> float:
        return (self.start_ms + self.end_ms) / 2000.0

    @property
    def duration(self) -> float:
        return (self.end_ms - self.start_ms) / 1000.0


def segment_region(region: Tuple[int, int], cfg: ScaleConfig, scale_id: int = 0) -> List[Segment]:
    """Slide a window of ``cfg.window_ms`` by ``cfg.hop_ms`` over one region (ms)."""
    start, end = region
    if end <= start:
        raise ValueError(f"empty region [{start}, {end})")
    out = []
    s = start
    while s < end:
        e = min(s + cfg.window_ms, end)
        if e - s >= cfg.min_len_ms:
            out.append(Segment(scale_id, s, e))
        s += cfg.hop_ms
    return out


@dataclass(frozen=True)
class ScaleSegments:
    """Array view of one scale's segments."""

    start_ms: np.ndarray
    end_ms: np.ndarray
    region: np.ndarray

    def __len__(self):
        return len(self.start_ms)

    @property
    def center2(self) -> np.ndarray:
        """Centers in half-milliseconds (start + end), exact in integers."""
        return self.start_ms + self.end_ms


@dataclass(frozen=True)
class MultiScaleSegmentSet:
    scales: Tuple[ScaleConfig, ...]
    per_scale: Tuple[ScaleSegments, ...]
    # (L_base, S); column s is the segment index at scale s; base column is identity
    mapping: np.ndarray
    regions: SpeechRegionList = field(default=None)

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    @property
    def base(self) -> ScaleSegments:
        return self.per_scale[-1]

    @property
    def n_base(self) -> int:
        return len(self.per_scale[-1])

    def segments(self, scale: int) -> List[Segment]:
        seg = self.per_scale[scale]
        return [Segment(scale, int(s), int(e)) for s, e in zip(seg.start_ms, seg.end_ms)]

    def counts(self) -> List[int]:
        return [len(s) for s in self.per_scale]


def _segment_scale(regions: SpeechRegionList, cfg: ScaleConfig, scale_id: int) -> ScaleSegments:
    starts, ends, reg = [], [], []
    for r, region in enumerate(regions):
        for seg in segment_region(region, cfg, scale_id):
            starts.append(seg.start_ms)
            ends.append(seg.end_ms)
            reg.append(r)
    return ScaleSegments(
        np.asarray(starts, dtype=np.int64),
        np.asarray(ends, dtype=np.int64),
        np.asarray(reg, dtype=np.int64),
    )


def build_multiscale(
    regions: SpeechRegionList, scales: Sequence[ScaleConfig] = DEFAULT_SCALES
) -> MultiScaleSegmentSet:
    """Segment every scale and map each base segment to its nearest-center coarse segments.

    The nearest segment is searched among segments of the same speech region;
    when the region holds no segment at that scale (region shorter than the
    scale's minimum length), all segments of the scale are candidates.
    """
    scales = tuple(scales)
    if not scales:
        raise ValueError("at least one scale is required")
    per_scale = tuple(_segment_scale(regions, cfg, s) for s, cfg in enumerate(scales))
    base = per_scale[-1]
    if len(base) == 0:
        raise DegenerateSessionError("no base-scale segment in session")
    mapping = np.empty((len(base), len(scales)), dtype=np.int64)
    for s, seg in enumerate(per_scale):
        if s == len(scales) - 1:
            mapping[:, s] = np.arange(len(base))
            continue
        if len(seg) == 0:
            raise DegenerateSessionError(
                f"scale {s} (window {scales[s].window_ms} ms) has no segment"
            )
        mapping[:, s] = kernels.nearest_center(base.center2, base.region, seg.center2, seg.region)
    return MultiScaleSegmentSet(scales, per_scale, mapping, regions)


def format_segments(msset: MultiScaleSegmentSet) -> str:
    """Lines ``scale_id start end`` in integer ms, coarse scales first."""
    lines = []
    for s, seg in enumerate(msset.per_scale):
        lines.extend(f"{s} {a} {b}\n" for a, b in zip(seg.start_ms, seg.end_ms))
    return "".join(lines)
