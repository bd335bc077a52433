"""Multi-scale speaker diarization with neural affinity score fusion."""

from ._accel import backend
from .affinity import AffinityTensor, build_affinity_tensor, fuse, fuse_blockwise
from .nasf import NasfParams, TrainConfig, infer_weights, train
from .nmesc import ClusterResult, nmesc
from .pipeline import PipelineConfig, diarize_session
from .scorer import DerReport, der, labels_to_timeline
from .segmenter import DEFAULT_SCALES, ScaleConfig, build_multiscale, segment_region
from .session_io import RttmTurn, oracle_sad, parse_rttm, read_rttm, write_rttm
from .synth import SynthConfig, gen_corpus, gen_session

__version__ = "0.1.0"

__all__ = [
    "AffinityTensor", "ClusterResult", "DEFAULT_SCALES", "DerReport", "NasfParams", "PipelineConfig",
    "RttmTurn", "ScaleConfig", "SynthConfig", "TrainConfig", "backend", "build_affinity_tensor",
    "build_multiscale", "der", "diarize_session", "fuse", "fuse_blockwise", "gen_corpus", "gen_session",
    "infer_weights", "labels_to_timeline", "nmesc", "oracle_sad", "parse_rttm", "read_rttm",
    "segment_region", "train", "write_rttm",
]
