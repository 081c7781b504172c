"""Turn per-(chunk, stream) speaker labels into recording-level tracks.

Each labeled stream's binarized activity is pasted onto the global
timeline under its speaker id; overlapping speech falls out naturally
when two streams of a chunk are active at once.  Chunks with no active
stream contribute silence of the correct duration, keeping the timeline
intact.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolationError
from .vbhmm import INACTIVE


@dataclass(frozen=True)
class DiarizationResult:
    """Binary per-speaker tracks over the full recording timeline.

    ``tracks`` maps display speaker ids ("spk0", "spk1", ... in first
    appearance order) to uint8 frame sequences; ``segments`` is the
    derived (speaker, onset_seconds, duration_seconds) list, sorted by
    onset then speaker.
    """

    recording_id: str
    frame_step: float
    tracks: dict
    segments: tuple


def _runs(track):
    """Maximal (start, end) index runs of ones in a binary sequence."""
    padded = np.concatenate([[0], np.asarray(track, dtype=np.int8), [0]])
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return list(zip(starts, ends))


def segments_from_tracks(tracks, frame_step):
    segments = []
    for speaker, track in tracks.items():
        for start, end in _runs(track):
            segments.append((speaker, start * frame_step, (end - start) * frame_step))
    segments.sort(key=lambda seg: (seg[1], seg[0]))
    return tuple(segments)


def stitch(recording, labels, activity_threshold=0.5):
    """Assemble a DiarizationResult from hard stream labels.

    Args:
        recording: canonicalized ChunkedRecording with active_counts set.
        labels: (chunks, streams) int array; INACTIVE marks silent streams.
        activity_threshold: frame activity at or above this is speech.

    Raises ConstraintViolationError if two streams of one chunk map to the
    same speaker.
    """
    if recording.active_counts is None:
        raise ValueError("recording needs active-stream detection first")
    labels = np.asarray(labels)
    counts = recording.active_counts
    frames = recording.frames_per_chunk
    total = recording.num_chunks * frames

    display = {}
    tracks = {}
    for t in range(recording.num_chunks):
        chunk_labels = [int(labels[t, c]) for c in range(int(counts[t]))]
        if len(set(chunk_labels)) != len(chunk_labels):
            raise ConstraintViolationError(
                f"chunk {t}: labels {chunk_labels} repeat a speaker"
            )
        for c, lab in enumerate(chunk_labels):
            if lab == INACTIVE:
                raise ValueError(f"chunk {t} stream {c}: active stream lacks a label")
            if lab not in display:
                display[lab] = f"spk{len(display)}"
                tracks[display[lab]] = np.zeros(total, dtype=np.uint8)
            on = recording.activities[t, c] >= activity_threshold
            tracks[display[lab]][t * frames : (t + 1) * frames] |= on.astype(np.uint8)
    return DiarizationResult(
        recording_id=recording.recording_id,
        frame_step=recording.frame_step,
        tracks=tracks,
        segments=segments_from_tracks(tracks, recording.frame_step),
    )


def median_filter(track, window_seconds, frame_step):
    """Sliding median over a binary track.

    The window length is window_seconds / frame_step rounded to the
    nearest odd count (ties upward); near the edges the window shrinks
    symmetrically so the median stays centered.
    """
    if window_seconds < frame_step:
        raise ValueError("window must cover at least one frame")
    track = np.asarray(track)
    width = int(round(window_seconds / frame_step))
    if width % 2 == 0:
        width += 1
    if width <= 1:
        return track.copy()
    half = width // 2
    n = len(track)
    out = np.empty_like(track)
    cumsum = np.concatenate([[0], np.cumsum(track)])
    for i in range(n):
        h = min(half, i, n - 1 - i)
        ones = cumsum[i + h + 1] - cumsum[i - h]
        out[i] = 1 if 2 * ones > 2 * h + 1 else 0
    return out


def filter_result(result, window_seconds):
    """Apply the median filter to every track of a DiarizationResult."""
    tracks = {
        speaker: median_filter(track, window_seconds, result.frame_step)
        for speaker, track in result.tracks.items()
    }
    return DiarizationResult(
        recording_id=result.recording_id,
        frame_step=result.frame_step,
        tracks=tracks,
        segments=segments_from_tracks(tracks, result.frame_step),
    )


def write_rttm(result, path):
    """Serialize segments in RTTM, one line per segment, 3-decimal times."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for speaker, onset, duration in result.segments:
            fh.write(
                f"SPEAKER {result.recording_id} 1 {onset:.3f} {duration:.3f} "
                f"<NA> <NA> {speaker} <NA> <NA>\n"
            )
