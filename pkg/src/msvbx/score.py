"""Diarization scoring: frame-based DER with collar, speaker-count error.

Scoring runs on a 10 ms grid.  Frames within the collar of any reference
segment boundary are excluded; the reference-to-hypothesis speaker map is
the assignment that maximizes total overlapped speech, found with the
Hungarian solver (greedy mapping can be suboptimal and is not used).
Overlap regions are fully counted on both sides.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateInputError

FRAME = 0.01  # seconds


@dataclass(frozen=True)
class ScoreReport:
    """Error components as percentages of scored reference speech time."""

    der: float
    missed: float
    false_alarm: float
    confusion: float
    ref_speakers: int
    hyp_speakers: int
    scored_ref_seconds: float = 0.0


def read_rttm(path):
    """Parse an RTTM file into {recording_id: [(speaker, onset, duration)]}."""
    recordings = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] != "SPEAKER" or len(parts) < 8:
                raise ValueError(f"{path}: malformed RTTM line: {line.strip()}")
            rec, onset, duration, speaker = parts[1], parts[3], parts[4], parts[7]
            recordings.setdefault(rec, []).append(
                (speaker, float(onset), float(duration))
            )
    return recordings


def _frame_matrix(segments, speakers, num_frames):
    mat = np.zeros((len(speakers), num_frames), dtype=bool)
    index = {spk: i for i, spk in enumerate(speakers)}
    for speaker, onset, duration in segments:
        start = int(round(onset / FRAME))
        end = int(round((onset + duration) / FRAME))
        mat[index[speaker], start:end] = True
    return mat


def der(reference, hypothesis, collar=0.0):
    """Diarization error rate of one recording.

    Args:
        reference, hypothesis: lists of (speaker, onset, duration).
        collar: seconds excluded around every reference boundary.

    Returns a ScoreReport; raises DegenerateInputError when the reference
    contains no speech.
    """
    if not reference:
        raise DegenerateInputError("reference contains no speech; DER is undefined")
    ref_speakers = sorted({seg[0] for seg in reference})
    hyp_speakers = sorted({seg[0] for seg in hypothesis})
    end = max(seg[1] + seg[2] for seg in reference + hypothesis)
    num_frames = int(round(end / FRAME)) + 1
    ref = _frame_matrix(reference, ref_speakers, num_frames)
    hyp = _frame_matrix(hypothesis, hyp_speakers, num_frames)

    scored = np.ones(num_frames, dtype=bool)
    if collar > 0.0:
        for _, onset, duration in reference:
            for boundary in (onset, onset + duration):
                lo = max(0, int(round((boundary - collar) / FRAME)))
                hi = min(num_frames, int(round((boundary + collar) / FRAME)))
                scored[lo:hi] = False
    ref = ref[:, scored]
    hyp = hyp[:, scored]

    overlap = ref.astype(np.int64) @ hyp.T.astype(np.int64)
    mapped_hyp = np.zeros_like(ref)
    if overlap.size:
        rows, cols = linear_sum_assignment(overlap, maximize=True)
        for r, h in zip(rows, cols):
            mapped_hyp[r] = hyp[h]

    n_ref = ref.sum(axis=0).astype(np.int64)
    n_hyp = hyp.sum(axis=0).astype(np.int64)
    n_correct = (ref & mapped_hyp).sum(axis=0).astype(np.int64)
    missed = np.maximum(n_ref - n_hyp, 0).sum()
    false_alarm = np.maximum(n_hyp - n_ref, 0).sum()
    confusion = (np.minimum(n_ref, n_hyp) - n_correct).sum()
    total = n_ref.sum()
    if total == 0:
        raise DegenerateInputError("no scored reference speech after collar")
    return ScoreReport(
        der=100.0 * (missed + false_alarm + confusion) / total,
        missed=100.0 * missed / total,
        false_alarm=100.0 * false_alarm / total,
        confusion=100.0 * confusion / total,
        ref_speakers=len(ref_speakers),
        hyp_speakers=len(hyp_speakers),
        scored_ref_seconds=float(total) * FRAME,
    )


def mean_error(ref_counts, hyp_counts):
    """Mean absolute difference between per-recording speaker counts."""
    ref_counts = list(ref_counts)
    hyp_counts = list(hyp_counts)
    if len(ref_counts) != len(hyp_counts):
        raise ValueError("count lists must have equal length")
    if not ref_counts:
        raise ValueError("need at least one recording")
    return float(
        np.mean([abs(r - h) for r, h in zip(ref_counts, hyp_counts)])
    )
