"""Per-session diarization pipeline and corpus-level helpers used by the CLI."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nasf
from .affinity import AffinityTensor, block_split, build_affinity_tensor, fuse, fuse_blockwise, mapped_embeddings
from .labels import pair_label_arrays, sample_pair_arrays, segment_labels, speaker_list
from .nmesc import ClusterResult, default_p_grid, nmesc
from .scorer import DerReport, DiarizationHypothesis, der, labels_to_timeline
from .segmenter import MultiScaleSegmentSet, ScaleConfig, build_multiscale
from .session_io import (
    EmbeddingMatrix,
    RttmTurn,
    oracle_sad,
    read_embeddings,
    read_rttm,
    to_ms,
)

logger = logging.getLogger(__name__)

ENV_PATH_OVERRIDES = {
    "manifest": "MSDIAR_MANIFEST",
    "out_dir": "MSDIAR_OUT_DIR",
    "model": "MSDIAR_MODEL",
    "hyp_dir": "MSDIAR_HYP_DIR",
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    """Flat, typed pipeline settings. Scale lists run coarse to fine."""

    windows: List[float] = field(default_factory=lambda: [1.5, 1.0, 0.5])
    hops: List[float] = field(default_factory=lambda: [0.75, 0.5, 0.25])
    min_lens: List[float] = field(default_factory=lambda: [0.5, 0.25, 0.17])
    mode: str = "nasf-s"
    infer_pairs: int = nasf.DEFAULT_INFER_PAIRS
    model: str = ""
    k_max: int = 8
    p_max_candidates: int = 100
    kmeans_restarts: int = 10
    collar: float = 0.25
    score_overlap: bool = False
    seed: int = 0
    # training
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 20
    train_pairs_per_session: int = 20000
    val_fraction: float = 0.1
    # synthesis
    n_sessions: int = 10
    speakers: List[int] = field(default_factory=lambda: [2, 3, 4])
    session_len: float = 120.0
    mean_turn: float = 2.17
    dim: int = 16
    noise: float = 0.1
    silence_fraction: float = 0.1
    # paths
    manifest: str = ""
    out_dir: str = "out"
    hyp_dir: str = ""
    workers: int = 1
    dump_affinity: bool = False

    def __post_init__(self):
        if not (len(self.windows) == len(self.hops) == len(self.min_lens)) or not self.windows:
            raise ValueError("windows, hops and min_lens must be non-empty and of equal length")
        if list(self.windows) != sorted(self.windows, reverse=True) or len(set(self.windows)) != len(self.windows):
            raise ValueError("scales must be ordered coarse to fine with one base scale")
        self.mode = self.mode.lower()
        if self.mode not in nasf.MODES:
            raise ValueError(f"mode must be one of {nasf.MODES}")

    @property
    def scales(self) -> Tuple[ScaleConfig, ...]:
        return tuple(
            ScaleConfig(to_ms(w), to_ms(h), to_ms(m)) for w, h, m in zip(self.windows, self.hops, self.min_lens)
        )

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        clean = {}
        for k, v in data.items():
            default = getattr(cls(), k)
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise TypeError(f"{k}: expected bool, got {v!r}")
            elif isinstance(default, int) and not isinstance(v, bool):
                if not isinstance(v, int):
                    raise TypeError(f"{k}: expected int, got {v!r}")
            elif isinstance(default, float):
                if not isinstance(v, (int, float)) or isinstance(v, bool):
                    raise TypeError(f"{k}: expected number, got {v!r}")
                v = float(v)
            elif isinstance(default, list):
                if not isinstance(v, list):
                    raise TypeError(f"{k}: expected list, got {v!r}")
            elif isinstance(default, str) and not isinstance(v, str):
                raise TypeError(f"{k}: expected string, got {v!r}")
            clean[k] = v
        return cls(**clean)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a flat JSON object")
        return cls.from_dict(data)

    def apply_env(self, environ=os.environ) -> "PipelineConfig":
        for key, var in ENV_PATH_OVERRIDES.items():
            if environ.get(var):
                setattr(self, key, environ[var])
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def single_scale(self, window: float) -> "PipelineConfig":
        i = self.windows.index(window)
        cfg = PipelineConfig(**{**self.to_dict(), "windows": [window], "hops": [self.hops[i]],
                                "min_lens": [self.min_lens[i]], "mode": "equal"})
        return cfg


# ---------------------------------------------------------------------------
# corpus manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    session_id: str
    rttm: Path
    # window in ms -> embedding file
    embeddings: Dict[int, Path]


def write_manifest(entries: Sequence[ManifestEntry], path) -> None:
    path = Path(path)
    windows = sorted({w for e in entries for w in e.embeddings}, reverse=True)
    lines = ["# session_id rttm " + " ".join(f"emb_{w}" for w in windows) + "\n"]
    for e in entries:
        cols = [e.session_id, _rel(e.rttm, path.parent)] + [_rel(e.embeddings[w], path.parent) for w in windows]
        lines.append(" ".join(cols) + "\n")
    path.write_text("".join(lines), encoding="utf-8", newline="\n")


def _rel(p: Path, base: Path) -> str:
    try:
        return str(Path(p).resolve().relative_to(base.resolve()))
    except ValueError:
        return str(p)


def read_manifest(path) -> List[ManifestEntry]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}: missing manifest header")
    header = lines[0].lstrip("#").split()
    if header[:2] != ["session_id", "rttm"]:
        raise ValueError(f"{path}: bad manifest header")
    windows = [int(h[len("emb_"):]) for h in header[2:]]
    out = []
    for n, line in enumerate(lines[1:], start=2):
        cols = line.split()
        if not cols:
            continue
        if len(cols) != len(header):
            raise ValueError(f"{path}:{n}: expected {len(header)} columns")
        resolve = lambda c: (path.parent / c) if not Path(c).is_absolute() else Path(c)
        out.append(ManifestEntry(cols[0], resolve(cols[1]), {w: resolve(c) for w, c in zip(windows, cols[2:])}))
    return out


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------


@dataclass
class Session:
    session_id: str
    turns: List[RttmTurn]
    msset: MultiScaleSegmentSet
    embeddings: List[EmbeddingMatrix]

    @property
    def mapped(self) -> np.ndarray:
        return np.stack(mapped_embeddings(self.msset, self.embeddings))


def make_session(session_id: str, turns: Sequence[RttmTurn], embeddings_by_window: Dict[int, EmbeddingMatrix],
                 scales: Sequence[ScaleConfig]) -> Session:
    turns = [t for t in turns if t.recording_id == session_id] or list(turns)
    msset = build_multiscale(oracle_sad(turns), scales)
    embs = []
    for s, cfg in enumerate(scales):
        if cfg.window_ms not in embeddings_by_window:
            raise ValueError(f"{session_id}: no embeddings for window {cfg.window_ms} ms")
        emb = embeddings_by_window[cfg.window_ms]
        if len(emb) != len(msset.per_scale[s]):
            raise ValueError(
                f"{session_id}: {len(emb)} embeddings for {len(msset.per_scale[s])} segments at window {cfg.window_ms} ms"
            )
        embs.append(emb)
    return Session(session_id, list(turns), msset, embs)


def missing_files(entries: Sequence[ManifestEntry], scales: Sequence[ScaleConfig]) -> List[str]:
    missing = []
    for e in entries:
        paths = [e.rttm] + [e.embeddings.get(s.window_ms) for s in scales]
        for s, p in zip([None] + list(scales), paths):
            if p is None:
                missing.append(f"{e.session_id}: no column for window {s.window_ms} ms")
            elif not Path(p).exists():
                missing.append(str(p))
    return missing


def load_session(entry: ManifestEntry, scales: Sequence[ScaleConfig]) -> Session:
    turns = read_rttm(entry.rttm)
    embs = {s.window_ms: read_embeddings(entry.embeddings[s.window_ms]) for s in scales}
    return make_session(entry.session_id, turns, embs, scales)


def session_pairs(session: Session, n_pairs: int, seed) -> nasf.SessionPairs:
    """Labelled training pairs for one session."""
    tensor = build_affinity_tensor(session.msset, session.embeddings)
    V = segment_labels(session.msset.base, session.turns, speaker_list(session.turns))
    I, J = sample_pair_arrays(session.msset.n_base, n_pairs, seed)
    I, J, d = pair_label_arrays(V, I, J)
    return nasf.SessionPairs(session.mapped, np.asarray(tensor.C), I, J, d, session.session_id)


# ---------------------------------------------------------------------------
# diarization
# ---------------------------------------------------------------------------


@dataclass
class SessionResult:
    session_id: str
    weights: List[np.ndarray]
    fused: np.ndarray
    tensor: AffinityTensor
    cluster: ClusterResult
    hypothesis: DiarizationHypothesis

    @property
    def turns(self) -> List[RttmTurn]:
        return self.hypothesis.to_turns(self.session_id)


def diarize_session(session: Session, cfg: PipelineConfig, params: Optional[nasf.NasfParams] = None) -> SessionResult:
    tensor = build_affinity_tensor(session.msset, session.embeddings)
    L = tensor.L
    mode = cfg.mode
    if mode == "nasf-d" and L < 6:
        logger.warning("%s: %d base segments, too few for nasf-d; using nasf-s", session.session_id, L)
        mode = "nasf-s"
    if mode != "equal" and L < 2:
        mode = "equal"
    weights = nasf.infer_weights(
        params, session.mapped if mode != "equal" else None, mode, cfg.infer_pairs, cfg.seed, n_scales=tensor.n_scales
    )
    if len(weights) == 1:
        fused = fuse(tensor, weights[0])
    else:
        fused = fuse_blockwise(tensor, weights, block_split(L, 3))
    grid = default_p_grid(L, cfg.p_max_candidates)
    cluster = nmesc(fused, grid, cfg.k_max, seed=cfg.seed, n_init=cfg.kmeans_restarts)
    hyp = labels_to_timeline(session.msset, cluster.labels)
    return SessionResult(session.session_id, weights, fused, tensor, cluster, hyp)


def score_session(session: Session, result: SessionResult, cfg: PipelineConfig) -> DerReport:
    return der(session.turns, result.hypothesis, collar=cfg.collar, score_overlap=cfg.score_overlap)
