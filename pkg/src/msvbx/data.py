"""Chunked multi-stream recordings and the MSVB1 interchange format.

A recording is a sequence of chunks; each chunk carries ``C`` parallel
output streams, and each stream holds one embedding vector plus a
frame-level activity track.  Streams whose mean activity falls below a
threshold are considered inactive, and active streams are moved to the
front of the stream axis so downstream inference can address them as a
dense prefix.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
import struct

import numpy as np

from .errors import BadMagicError, DimensionOverflowError, TruncatedPayloadError
from .validation import check_activities, check_unit_interval

MAGIC = b"MSVB1\n"

# element counts above this cannot come from a sane header
_MAX_ELEMENTS = 2**32


@dataclass(frozen=True)
class ChunkedRecording:
    """Per-chunk multi-stream embeddings and frame activities.

    Attributes:
        recording_id: identifier, taken from the file stem on load.
        frame_step: seconds per activity frame.
        embeddings: (num_chunks, num_streams, embed_dim) float array.
        activities: (num_chunks, num_streams, frames_per_chunk) in [0, 1].
        active_counts: per-chunk number of active streams, or None before
            detection ran.
        stream_perm: (num_chunks, num_streams) int array; column k holds the
            original stream index now stored at canonical position k.
    """

    recording_id: str
    frame_step: float
    embeddings: np.ndarray
    activities: np.ndarray
    active_counts: np.ndarray | None = None
    stream_perm: np.ndarray | None = None

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        act = check_activities(self.activities)
        if emb.ndim != 3:
            raise ValueError(f"embeddings must be 3-d, got shape {emb.shape}")
        if emb.shape[:2] != act.shape[:2]:
            raise ValueError(
                f"embeddings {emb.shape} and activities {act.shape} disagree "
                "on (num_chunks, num_streams)"
            )
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "activities", act)
        if self.active_counts is not None:
            counts = np.asarray(self.active_counts, dtype=np.int64)
            if counts.shape != (self.num_chunks,):
                raise ValueError("active_counts must have one entry per chunk")
            if counts.size and (counts.min() < 0 or counts.max() > self.num_streams):
                raise ValueError("active_counts must lie in [0, num_streams]")
            object.__setattr__(self, "active_counts", counts)
        if self.stream_perm is not None:
            perm = np.asarray(self.stream_perm, dtype=np.int64)
            if perm.shape != (self.num_chunks, self.num_streams):
                raise ValueError("stream_perm must be (num_chunks, num_streams)")
            object.__setattr__(self, "stream_perm", perm)

    @property
    def num_chunks(self):
        return self.embeddings.shape[0]

    @property
    def num_streams(self):
        return self.embeddings.shape[1]

    @property
    def embed_dim(self):
        return self.embeddings.shape[2]

    @property
    def frames_per_chunk(self):
        return self.activities.shape[2]


@dataclass(frozen=True)
class InferenceConfig:
    """Hyperparameters of the variational HMM inference.

    Defaults follow the standard published operating point: acoustic scale
    0.4, speaker-prior scale 17, loop probability 0.8, silence threshold
    0.05.
    """

    fa: float = 0.4
    fb: float = 17.0
    loop_prob: float = 0.8
    tau: float = 0.05
    max_iters: int = 40
    elbo_rel_tol: float = 1e-6
    pi_drop_eps: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if not self.fa > 0:
            raise ValueError(f"fa must be positive, got {self.fa}")
        if not self.fb > 0:
            raise ValueError(f"fb must be positive, got {self.fb}")
        check_unit_interval(self.loop_prob, "loop_prob", open_left=True, open_right=True)
        check_unit_interval(self.tau, "tau", open_left=True, open_right=True)
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.elbo_rel_tol > 0:
            raise ValueError("elbo_rel_tol must be positive")
        if not self.pi_drop_eps > 0:
            raise ValueError("pi_drop_eps must be positive")


def detect_active_streams(activities, tau):
    """Count active streams per chunk and compute the active-first reordering.

    A stream is active when its mean activity is >= tau (the boundary
    counts as active).  The returned permutation is stable: active streams
    keep their relative order, followed by inactive ones in theirs.

    Args:
        activities: (chunks, streams, frames) array in [0, 1].
        tau: activity threshold, 0 < tau < 1.

    Returns:
        (active_counts, perm): per-chunk counts and a (chunks, streams)
        index array mapping canonical position -> original stream index.
    """
    act = check_activities(activities)
    check_unit_interval(tau, "tau", open_left=True, open_right=True)
    num_chunks, num_streams = act.shape[:2]
    means = act.mean(axis=2) if act.shape[2] else np.zeros(act.shape[:2])
    is_active = means >= tau
    counts = is_active.sum(axis=1).astype(np.int64)
    perm = np.empty((num_chunks, num_streams), dtype=np.int64)
    for t in range(num_chunks):
        on = np.flatnonzero(is_active[t])
        off = np.flatnonzero(~is_active[t])
        perm[t] = np.concatenate([on, off])
    return counts, perm


def with_active_streams(recording, tau):
    """Return a copy of the recording with streams canonically reordered.

    Active streams occupy positions 0..count-1 in every chunk; the applied
    permutation is recorded on the result so it can be undone.
    """
    counts, perm = detect_active_streams(recording.activities, tau)
    rows = np.arange(recording.num_chunks)[:, None]
    return replace(
        recording,
        embeddings=recording.embeddings[rows, perm],
        activities=recording.activities[rows, perm],
        active_counts=counts,
        stream_perm=perm,
    )


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedPayloadError(f"expected {n} bytes of {what}, got {len(buf)}")
    return buf


def read_recording(path):
    """Read an MSVB1 file.  The recording id is the file stem."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagicError(f"{path}: bad magic {magic!r}")
        header = _read_exact(fh, 4 * 4 + 4, "header")
        num_chunks, num_streams, embed_dim, frames = struct.unpack("<4I", header[:16])
        (frame_step,) = struct.unpack("<f", header[16:])
        for count in (num_chunks * num_streams * frames, num_chunks * num_streams * embed_dim):
            if count > _MAX_ELEMENTS:
                raise DimensionOverflowError(
                    f"{path}: header declares {count} elements"
                )
        n_act = num_chunks * num_streams * frames
        n_emb = num_chunks * num_streams * embed_dim
        act = np.frombuffer(_read_exact(fh, 4 * n_act, "activities"), dtype="<f4")
        emb = np.frombuffer(_read_exact(fh, 4 * n_emb, "embeddings"), dtype="<f4")
        trailing = fh.read(1)
        if trailing:
            raise TruncatedPayloadError(f"{path}: trailing bytes after payload")
    return ChunkedRecording(
        recording_id=path.stem,
        frame_step=float(frame_step),
        embeddings=emb.reshape(num_chunks, num_streams, embed_dim).astype(np.float64),
        activities=act.reshape(num_chunks, num_streams, frames).astype(np.float64),
    )


def write_recording(recording, path):
    """Write an MSVB1 file (little-endian 32-bit floats)."""
    rec = recording
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(
            struct.pack(
                "<4I",
                rec.num_chunks,
                rec.num_streams,
                rec.embed_dim,
                rec.frames_per_chunk,
            )
        )
        fh.write(struct.pack("<f", rec.frame_step))
        fh.write(rec.activities.astype("<f4").tobytes())
        fh.write(rec.embeddings.astype("<f4").tobytes())
