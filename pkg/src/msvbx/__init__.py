"""Multi-stream Bayesian HMM clustering for chunked speaker embeddings.

Pipeline: embedding backend (L2 + LDA + two-covariance whitening) ->
constrained agglomerative initialization -> variational HMM inference
over ordered speaker tuples -> activity stitching -> RTTM, plus a
frame-based scorer and a generative oracle for end-to-end validation.
"""

from .cahc import (
    CannotLinkSet,
    ClusterAssignment,
    ConstrainedAgglomerative,
    constrained_ahc,
    init_occupancy,
)
from .data import (
    ChunkedRecording,
    InferenceConfig,
    detect_active_streams,
    read_recording,
    with_active_streams,
    write_recording,
)
from .plda import PldaBackend, l2_normalize, train_lda, train_plda
from .score import ScoreReport, der, mean_error, read_rttm
from .stitch import (
    DiarizationResult,
    filter_result,
    median_filter,
    stitch,
    write_rttm,
)
from .synth import SynthConfig, SynthTruth, generate, label_error_rate
from .vbhmm import (
    INACTIVE,
    ClusteringResult,
    HmmParams,
    MultiStreamVbx,
    SingleStreamVbx,
    SpeakerPosteriors,
    StateSpace,
    VbTrace,
    build_state_space,
    elbo,
    forward_backward,
    run_msvbx,
    run_single_stream_vbx,
    state_log_emissions,
    update_pi,
    update_speaker_posteriors,
)

__all__ = [
    "CannotLinkSet",
    "ChunkedRecording",
    "ClusterAssignment",
    "ClusteringResult",
    "ConstrainedAgglomerative",
    "DiarizationResult",
    "HmmParams",
    "INACTIVE",
    "InferenceConfig",
    "MultiStreamVbx",
    "PldaBackend",
    "ScoreReport",
    "SingleStreamVbx",
    "SpeakerPosteriors",
    "StateSpace",
    "SynthConfig",
    "SynthTruth",
    "VbTrace",
    "build_state_space",
    "constrained_ahc",
    "der",
    "detect_active_streams",
    "elbo",
    "filter_result",
    "forward_backward",
    "generate",
    "init_occupancy",
    "l2_normalize",
    "label_error_rate",
    "mean_error",
    "median_filter",
    "read_recording",
    "read_rttm",
    "run_msvbx",
    "run_single_stream_vbx",
    "state_log_emissions",
    "stitch",
    "train_lda",
    "train_plda",
    "update_pi",
    "update_speaker_posteriors",
    "with_active_streams",
    "write_recording",
    "write_rttm",
]

__version__ = "0.1.0"
