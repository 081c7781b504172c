"""Sampling oracle: draws recordings from the exact model inference assumes.

Speaker latents are standard normal, stream embeddings are unit-variance
Gaussians around the scaled latent, the state sequence follows the
loop-mixture transition over the tuple state space, and activities are
ideal binaries (with an optional flip knob for robustness experiments).
Because the truth is known, clustering quality is measurable exactly.
"""

from dataclasses import dataclass
import json

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import ChunkedRecording
from .vbhmm import INACTIVE, build_state_space
from .validation import as_float_array


@dataclass(frozen=True)
class SynthConfig:
    num_speakers: int = 3
    num_chunks: int = 200
    max_streams: int = 2
    embed_dim: int = 32
    phi: tuple = tuple(np.linspace(10.0, 1.0, 32))
    loop_prob: float = 0.8
    active_count_distribution: tuple = (0.0, 0.5, 0.5)
    frames: int = 10
    frame_step: float = 0.1
    seed: int = 0
    activity_flip_prob: float = 0.0

    def __post_init__(self):
        dist = np.asarray(self.active_count_distribution, dtype=np.float64)
        if dist.shape != (self.max_streams + 1,):
            raise ValueError("active_count_distribution needs max_streams + 1 entries")
        if abs(dist.sum() - 1.0) > 1e-9 or dist.min() < 0.0:
            raise ValueError("active_count_distribution must be a probability vector")
        if np.any(dist[self.num_speakers + 1 :] > 0.0):
            raise ValueError("active count may not exceed num_speakers")
        phi = as_float_array(self.phi, "phi", ndim=1)
        if phi.shape != (self.embed_dim,):
            raise ValueError("phi must have embed_dim entries")
        if phi.min() < 0.0:
            raise ValueError("phi must be nonnegative")


@dataclass(frozen=True)
class SynthTruth:
    """Ground truth accompanying a generated recording."""

    labels: np.ndarray  # (chunks, streams), INACTIVE where silent
    state_sequence: np.ndarray  # state index per chunk, -1 for silent chunks
    num_speakers: int  # speakers actually appearing in the labels


def generate(config):
    """Sample one recording plus its truth; fully determined by the seed."""
    rng = np.random.default_rng(config.seed)
    phi = np.asarray(config.phi, dtype=np.float64)
    scale = np.sqrt(phi)
    latents = rng.standard_normal((config.num_speakers, config.embed_dim))
    counts = rng.choice(
        config.max_streams + 1,
        size=config.num_chunks,
        p=np.asarray(config.active_count_distribution),
    )
    space = build_state_space(config.num_speakers, config.max_streams)

    embeddings = np.zeros((config.num_chunks, config.max_streams, config.embed_dim))
    activities = np.zeros((config.num_chunks, config.max_streams, config.frames))
    labels = np.full((config.num_chunks, config.max_streams), INACTIVE, dtype=np.int64)
    sequence = np.full(config.num_chunks, -1, dtype=np.int64)

    prev = None
    for t in range(config.num_chunks):
        k = int(counts[t])
        if k == 0:
            continue
        allowed = space.states_of_size[k]
        probs = np.full(len(allowed), 1.0 / len(allowed))
        if prev is not None and prev in allowed:
            probs *= 1.0 - config.loop_prob
            probs[np.flatnonzero(allowed == prev)[0]] += config.loop_prob
        state = int(rng.choice(allowed, p=probs))
        sequence[t] = state
        prev = state
        tup = space.states[state]
        for c, g in enumerate(tup):
            embeddings[t, c] = scale * latents[g] + rng.standard_normal(
                config.embed_dim
            )
            activities[t, c] = 1.0
            labels[t, c] = g

    if config.activity_flip_prob > 0.0:
        flips = rng.random(activities.shape) < config.activity_flip_prob
        activities = np.where(flips, 1.0 - activities, activities)

    recording = ChunkedRecording(
        recording_id=f"synth-{config.seed}",
        frame_step=config.frame_step,
        embeddings=embeddings,
        activities=activities,
    )
    appearing = len(set(labels[labels != INACTIVE].tolist()))
    truth = SynthTruth(labels=labels, state_sequence=sequence, num_speakers=appearing)
    return recording, truth


def write_truth(truth, path):
    payload = {
        "labels": truth.labels.tolist(),
        "num_speakers": truth.num_speakers,
        "state_sequence": truth.state_sequence.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def read_truth(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return SynthTruth(
        labels=np.asarray(payload["labels"], dtype=np.int64),
        state_sequence=np.asarray(payload["state_sequence"], dtype=np.int64),
        num_speakers=int(payload["num_speakers"]),
    )


def label_error_rate(truth_labels, predicted_labels):
    """Fraction of active stream labels wrong under the best global renaming.

    The renaming is one-to-one between truth and predicted speaker sets,
    chosen by maximum-agreement assignment, so pure relabelings score 0.
    """
    truth = np.asarray(truth_labels)
    pred = np.asarray(predicted_labels)
    if truth.shape != pred.shape:
        raise ValueError("label arrays must share a shape")
    mask = truth != INACTIVE
    if not np.array_equal(mask, pred != INACTIVE):
        raise ValueError("active positions differ between truth and prediction")
    t = truth[mask]
    p = pred[mask]
    if t.size == 0:
        return 0.0
    t_ids, t_inv = np.unique(t, return_inverse=True)
    p_ids, p_inv = np.unique(p, return_inverse=True)
    confusion = np.zeros((len(t_ids), len(p_ids)), dtype=np.int64)
    np.add.at(confusion, (t_inv, p_inv), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    agreement = confusion[rows, cols].sum()
    return float(1.0 - agreement / t.size)
