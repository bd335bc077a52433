"""Synthetic sessions whose embedding noise shrinks with segment duration.

Each speaker owns a fixed unit-norm centroid (orthonormal across speakers).
A segment's embedding is the duration-weighted mix of the centroids of the
speakers it contains plus isotropic Gaussian noise with per-component
deviation ``noise / sqrt(speech seconds)``, then renormalized. The noise is
the segment average of a per-millisecond white-noise process. Short segments
resolve turns finely but carry noisy embeddings; long ones are clean but
blur turn boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .labels import segment_labels
from .segmenter import DEFAULT_SCALES, MultiScaleSegmentSet, ScaleConfig, build_multiscale
from .session_io import EmbeddingMatrix, RttmTurn, oracle_sad


@dataclass(frozen=True)
class SynthConfig:
    speakers: int = 3
    session_len: float = 120.0
    mean_turn: float = 2.17
    dim: int = 16
    noise: float = 0.1
    seed: int = 0
    silence_fraction: float = 0.1
    jump_prob: float = 0.3
    # gamma shape of turn durations; 1 gives exponential durations
    turn_shape: float = 2.0
    scales: Tuple[ScaleConfig, ...] = field(default=DEFAULT_SCALES)
    recording_id: str = "synth"

    def __post_init__(self):
        if self.speakers < 1:
            raise ValueError("speakers must be >= 1")
        if self.mean_turn <= 0:
            raise ValueError("mean_turn must be positive")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.session_len <= 0:
            raise ValueError("session_len must be positive")
        if not 0 <= self.silence_fraction < 1:
            raise ValueError("silence_fraction must be in [0, 1)")
        if self.dim < self.speakers:
            raise ValueError(f"dim {self.dim} < speakers {self.speakers}: cannot orthogonalize centroids")


@dataclass(frozen=True)
class SynthSession:
    turns: List[RttmTurn]
    embeddings: List[EmbeddingMatrix]
    msset: MultiScaleSegmentSet
    centroids: np.ndarray


def speaker_centroids(n_speakers: int, dim: int, rng) -> np.ndarray:
    """(n_speakers, dim) orthonormal rows."""
    Q, R = np.linalg.qr(rng.normal(size=(dim, n_speakers)))
    Q = Q * np.sign(np.diag(R))[None, :]
    return Q.T.copy()


def generate_turns(cfg: SynthConfig, rng) -> List[RttmTurn]:
    total = int(round(cfg.session_len * 1000))
    mean_ms = cfg.mean_turn * 1000
    # a gap follows half of the turns on average
    gap_mean = 2.0 * cfg.silence_fraction * mean_ms / (1.0 - cfg.silence_fraction)
    names = [f"S{k:02d}" for k in range(cfg.speakers)]
    turns = []
    t = 0
    spk = int(rng.integers(cfg.speakers))
    while t < total:
        dur = int(round(rng.gamma(cfg.turn_shape, mean_ms / cfg.turn_shape)))
        dur = min(max(dur, 10), total - t)
        turns.append(RttmTurn(cfg.recording_id, t, dur, names[spk]))
        t += dur
        if gap_mean > 0 and rng.random() < 0.5:
            t += int(round(rng.exponential(gap_mean)))
        if cfg.speakers > 1:
            if rng.random() < cfg.jump_prob:
                spk = (spk + int(rng.integers(1, cfg.speakers))) % cfg.speakers
            else:
                spk = (spk + 1) % cfg.speakers
    return turns


class FrameNoise:
    """Per-millisecond white noise; a segment's noise is its frame average.

    The average over T seconds has per-component deviation ``noise/sqrt(T)``
    and overlapping segments (within or across scales) share noise, as
    embeddings pooled from shared audio do.
    """

    def __init__(self, total_ms: int, dim: int, noise: float, rng):
        self.scale = noise * np.sqrt(1000.0)
        self._cum = np.zeros((total_ms + 1, dim))
        if noise > 0:
            np.cumsum(rng.normal(size=(total_ms, dim)), axis=0, out=self._cum[1:])

    def segment(self, start_ms: np.ndarray, end_ms: np.ndarray) -> np.ndarray:
        n = (end_ms - start_ms)[:, None]
        return self.scale * (self._cum[end_ms] - self._cum[start_ms]) / n


def segment_embeddings(durations_s: np.ndarray, centroids: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Unit-norm embeddings from per-segment speaker durations (n_seg, K) and noise rows."""
    speech = durations_s.sum(axis=1)
    if np.any(speech <= 0):
        raise ValueError("segment without speech")
    X = (durations_s / speech[:, None]) @ centroids + noise
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def gen_session(cfg: SynthConfig) -> SynthSession:
    rng = np.random.default_rng(cfg.seed)
    centroids = speaker_centroids(cfg.speakers, cfg.dim, rng)
    turns = generate_turns(cfg, rng)
    msset = build_multiscale(oracle_sad(turns), cfg.scales)
    speakers = [f"S{k:02d}" for k in range(cfg.speakers)]
    frames = FrameNoise(turns[-1].end_ms, cfg.dim, cfg.noise, rng)
    embeddings = []
    for s, seg in enumerate(msset.per_scale):
        V = segment_labels(seg, turns, speakers)
        X = segment_embeddings(V, centroids, frames.segment(seg.start_ms, seg.end_ms))
        embeddings.append(EmbeddingMatrix(s, X))
    return SynthSession(turns, embeddings, msset, centroids)


def session_seeds(seed: int, n: int) -> List[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(n)]


def gen_corpus(cfg: SynthConfig, n_sessions: int, prefix: str = "synth", speakers: Sequence[int] = None) -> List[Tuple[str, SynthSession]]:
    """``n_sessions`` sessions with independent derived seeds.

    ``speakers`` optionally cycles the speaker count across sessions.
    """
    out = []
    for i, s in enumerate(session_seeds(cfg.seed, n_sessions)):
        sid = f"{prefix}{i:04d}"
        k = cfg.speakers if not speakers else speakers[i % len(speakers)]
        sc = SynthConfig(**{**cfg.__dict__, "seed": s, "recording_id": sid, "speakers": k})
        out.append((sid, gen_session(sc)))
    return out
