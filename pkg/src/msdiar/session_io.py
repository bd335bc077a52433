"""RTTM and embedding-archive I/O, plus oracle speech regions.

Times are kept as integer milliseconds internally; the public dataclasses
expose seconds as properties.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class RttmParseError(ValueError):
    pass


class EmbeddingFormatError(ValueError):
    pass


def to_ms(seconds: Union[float, str]) -> int:
    """Round a decimal-seconds value to integer milliseconds."""
    return int(round(float(seconds) * 1000.0))


@dataclass(frozen=True, order=True)
class RttmTurn:
    recording_id: str
    onset_ms: int
    duration_ms: int
    speaker_id: str

    def __post_init__(self):
        if self.onset_ms < 0:
            raise ValueError(f"negative onset: {self.onset_ms} ms")
        if self.duration_ms <= 0:
            raise ValueError(f"non-positive duration: {self.duration_ms} ms")

    @classmethod
    def from_seconds(cls, recording_id: str, onset: float, duration: float, speaker_id: str):
        return cls(recording_id, to_ms(onset), to_ms(duration), speaker_id)

    @property
    def onset(self) -> float:
        return self.onset_ms / 1000.0

    @property
    def duration(self) -> float:
        return self.duration_ms / 1000.0

    @property
    def end_ms(self) -> int:
        return self.onset_ms + self.duration_ms

    @property
    def end(self) -> float:
        return self.end_ms / 1000.0


def parse_rttm(text: Union[str, bytes]) -> List[RttmTurn]:
    """Parse RTTM ``SPEAKER`` lines into turns sorted by (recording, onset)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    turns = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 8 or fields[0] != "SPEAKER":
            raise RttmParseError(f"line {lineno}: malformed RTTM line {line!r}")
        try:
            onset = float(fields[3])
            duration = float(fields[4])
        except ValueError:
            raise RttmParseError(f"line {lineno}: non-numeric onset/duration") from None
        if not (math.isfinite(onset) and math.isfinite(duration)):
            raise RttmParseError(f"line {lineno}: non-finite onset/duration")
        if duration < 0:
            raise ValueError(f"line {lineno}: negative duration {duration}")
        if onset < 0:
            raise ValueError(f"line {lineno}: negative onset {onset}")
        dur_ms = to_ms(duration)
        if dur_ms == 0:
            logger.warning("line %d: zero-length turn dropped", lineno)
            continue
        turns.append(RttmTurn(fields[1], to_ms(onset), dur_ms, fields[7]))
    turns.sort(key=lambda t: (t.recording_id, t.onset_ms, t.duration_ms, t.speaker_id))
    return turns


def read_rttm(path: PathLike) -> List[RttmTurn]:
    return parse_rttm(Path(path).read_bytes())


def emit_rttm(turns: Iterable[RttmTurn]) -> str:
    lines = [
        f"SPEAKER {t.recording_id} 1 {t.onset_ms / 1000:.3f} {t.duration_ms / 1000:.3f} "
        f"<NA> <NA> {t.speaker_id} <NA> <NA>\n"
        for t in turns
    ]
    return "".join(lines)


def write_rttm(turns: Iterable[RttmTurn], path: PathLike) -> None:
    Path(path).write_text(emit_rttm(turns), encoding="utf-8", newline="\n")


def group_by_recording(turns: Iterable[RttmTurn]) -> dict:
    out: dict = {}
    for t in turns:
        out.setdefault(t.recording_id, []).append(t)
    return out


# ---------------------------------------------------------------------------
# speech regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeechRegionList:
    """Sorted, disjoint ``[start, end)`` intervals in ms."""

    regions: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        prev_end = None
        for s, e in self.regions:
            if s >= e:
                raise ValueError(f"empty region [{s}, {e})")
            if prev_end is not None and s < prev_end:
                raise ValueError("regions overlap or are unsorted")
            prev_end = e

    def __len__(self):
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    @property
    def total_ms(self) -> int:
        return sum(e - s for s, e in self.regions)

    def as_seconds(self) -> List[Tuple[float, float]]:
        return [(s / 1000.0, e / 1000.0) for s, e in self.regions]


def merge_intervals(intervals: Iterable[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Union of half-open integer intervals; touching intervals are joined."""
    merged: List[List[int]] = []
    for s, e in sorted(intervals):
        if e <= s:
            continue
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def oracle_sad(turns: Sequence[RttmTurn]) -> SpeechRegionList:
    """Speech regions as the union of all reference turns."""
    return SpeechRegionList(tuple(merge_intervals((t.onset_ms, t.end_ms) for t in turns)))


# ---------------------------------------------------------------------------
# embedding archives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingMatrix:
    scale_id: int
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] < 1:
            raise EmbeddingFormatError(f"embedding rows must be (L, dim), got {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise EmbeddingFormatError("non-finite embedding entry")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __len__(self):
        return self.rows.shape[0]


def format_embeddings(matrix: EmbeddingMatrix) -> str:
    L, dim = matrix.rows.shape
    lines = [f"{dim} {L} {matrix.scale_id}\n"]
    lines.extend(" ".join(f"{x:.9g}" for x in row) + "\n" for row in matrix.rows)
    return "".join(lines)


def write_embeddings(matrix: EmbeddingMatrix, path: PathLike) -> None:
    Path(path).write_text(format_embeddings(matrix), encoding="utf-8", newline="\n")


def parse_embeddings(text: str, source: str = "<string>") -> EmbeddingMatrix:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise EmbeddingFormatError(f"{source}: empty embedding file")
    header = lines[0].split()
    if len(header) != 3:
        raise EmbeddingFormatError(f"{source}: header must be 'dim L scale_id'")
    try:
        dim, L, scale_id = (int(x) for x in header)
    except ValueError:
        raise EmbeddingFormatError(f"{source}: non-integer header {lines[0]!r}") from None
    if dim < 1 or L < 0:
        raise EmbeddingFormatError(f"{source}: bad header values {lines[0]!r}")
    body = lines[1:]
    if len(body) != L:
        raise EmbeddingFormatError(f"{source}: header says {L} rows, found {len(body)}")
    rows = np.empty((L, dim), dtype=np.float64)
    for i, ln in enumerate(body):
        fields = ln.split()
        if len(fields) != dim:
            raise EmbeddingFormatError(
                f"{source}: row {i} has {len(fields)} values, expected {dim}"
            )
        try:
            rows[i] = [float(x) for x in fields]
        except ValueError:
            raise EmbeddingFormatError(f"{source}: row {i} is not numeric") from None
        if not np.all(np.isfinite(rows[i])):
            raise EmbeddingFormatError(f"{source}: row {i} has a non-finite value")
    if L == 0:
        rows = np.empty((0, dim))
    return EmbeddingMatrix(scale_id, rows)


def read_embeddings(path: PathLike) -> EmbeddingMatrix:
    path = Path(path)
    return parse_embeddings(path.read_text(encoding="utf-8"), source=str(path))
