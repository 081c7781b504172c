"""Variational Bayesian HMM clustering of multi-stream embedding sequences.

Each HMM state is an ordered tuple of distinct speakers, one per active
stream of a chunk, so a single state explains all streams of a chunk at
once and the same speaker can never label two streams of one chunk.
Gaussian speaker models are tied across every state a speaker appears in.
Inference alternates closed-form speaker-posterior updates with a
forward-backward pass over the chunk chain; state priors are re-estimated
from entry responsibilities and states whose prior collapses are dropped,
which is what shrinks the speaker count.

The single-speaker-per-chunk algorithm is the exact special case where
every tuple has length one; ``SingleStreamVbx`` implements that path
directly with dense per-speaker arrays.
"""

from dataclasses import dataclass
from itertools import permutations
import math

import numpy as np
from sklearn.base import BaseEstimator

from .cahc import ClusterAssignment, init_occupancy
from .errors import DegenerateModelError, InfeasibleChunkError
from .validation import as_float_array

LOG_2PI = math.log(2.0 * math.pi)

# label value for streams that carry no active speaker
INACTIVE = -1

_GAMMA_FLOOR = 1e-300


def _logsumexp(a, axis):
    """Stable log-sum-exp that tolerates -inf entries and all--inf slices."""
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis))
    return out + np.squeeze(m_safe, axis=axis)


# ---------------------------------------------------------------------------
# State space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateSpace:
    """Ordered speaker tuples of lengths 1..max_streams, no repeats.

    Attributes:
        states: tuple of speaker tuples, enumerated by length then
            lexicographically.
        index_of: state tuple -> state index.
        state_size: per-state tuple length.
        states_of_size: length -> array of state indices.
        speaker_at: (num_states, max_size) int array, -1 padded; entry
            (s, c) is the speaker on stream c of state s.
        tied_pairs: per speaker, the tuple of (state, stream) positions it
            occupies.
    """

    num_speakers: int
    max_streams: int
    states: tuple
    index_of: dict
    state_size: np.ndarray
    states_of_size: dict
    speaker_at: np.ndarray
    tied_pairs: tuple

    @property
    def num_states(self):
        return len(self.states)

    def speaker(self, state, stream):
        """The speaker occupying ``stream`` of ``state``."""
        return self.states[state][stream]


def build_state_space(num_speakers, max_streams):
    """Enumerate all ordered tuples of distinct speakers, lengths 1..C.

    Tuples are ordered by length and lexicographically within a length, so
    state indices are reproducible.  Reversed pairs like (B, A) are
    distinct states from (A, B): stream order carries meaning because each
    stream has its own embedding.
    """
    if num_speakers < 1:
        raise ValueError("num_speakers must be >= 1")
    if max_streams < 1:
        raise ValueError("max_streams must be >= 1")
    states = []
    for size in range(1, min(max_streams, num_speakers) + 1):
        states.extend(permutations(range(num_speakers), size))
    states = tuple(states)
    state_size = np.array([len(s) for s in states], dtype=np.int64)
    states_of_size = {
        size: np.flatnonzero(state_size == size)
        for size in range(1, int(state_size.max()) + 1)
    }
    max_size = int(state_size.max())
    speaker_at = np.full((len(states), max_size), -1, dtype=np.int64)
    pairs = [[] for _ in range(num_speakers)]
    for s, tup in enumerate(states):
        for c, g in enumerate(tup):
            speaker_at[s, c] = g
            pairs[g].append((s, c))
    return StateSpace(
        num_speakers=num_speakers,
        max_streams=max_streams,
        states=states,
        index_of={tup: s for s, tup in enumerate(states)},
        state_size=state_size,
        states_of_size=states_of_size,
        speaker_at=speaker_at,
        tied_pairs=tuple(tuple(p) for p in pairs),
    )


# ---------------------------------------------------------------------------
# Variational updates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeakerPosteriors:
    """Diagonal Gaussian posteriors, one row per speaker."""

    mean: np.ndarray  # (num_speakers, dim)
    precision: np.ndarray  # (num_speakers, dim), entries >= 1


@dataclass(frozen=True)
class HmmParams:
    """State priors over the retained states plus the loop probability."""

    pi: np.ndarray
    loop_prob: float


def update_speaker_posteriors(space, gamma, rho, phi, fa, fb):
    """Closed-form update of every speaker's Gaussian posterior.

    Args:
        gamma: (chunks, num_states) occupancies; columns of dropped states
            must be zero.
        rho: (chunks, max_size, dim) per-stream projected stats, zero on
            inactive positions.
        phi: (dim,) between-speaker variances.

    Returns SpeakerPosteriors with precision = 1 + (fa/fb) * occupancy * phi
    and mean = (fa/fb) * stat / precision.
    """
    dim = rho.shape[2]
    scale = fa / fb
    occupancy = np.zeros(space.num_speakers)
    stat = np.zeros((space.num_speakers, dim))
    for g, pairs in enumerate(space.tied_pairs):
        for s, c in pairs:
            col = gamma[:, s]
            occupancy[g] += col.sum()
            stat[g] += col @ rho[:, c, :]
    precision = 1.0 + scale * occupancy[:, None] * phi[None, :]
    mean = scale * stat / precision
    return SpeakerPosteriors(mean=mean, precision=precision)


def state_log_emissions(space, posteriors, rho, x, phi, counts, fa):
    """Expected log-likelihood of each chunk under each state.

    States whose size differs from the chunk's active count get -inf: the
    active count is treated as an observed variable that only states of
    matching size can emit.

    Args:
        rho, x: (chunks, max_size, dim) arrays, zero on inactive positions.
        counts: per-chunk active stream counts (all >= 1 here).

    Returns a (chunks, num_states) matrix of log emission scores.
    """
    num_chunks, _, dim = x.shape
    for count in np.unique(counts):
        if int(count) not in space.states_of_size:
            raise InfeasibleChunkError(
                f"no state with {int(count)} active speakers in the model"
            )
    # per (chunk, stream, speaker) score, before masking
    cross = np.einsum("gd,tcd->tcg", posteriors.mean, rho)
    moment = 0.5 * ((1.0 / posteriors.precision + posteriors.mean**2) @ phi)
    base = -0.5 * dim * LOG_2PI - 0.5 * np.sum(x * x, axis=2)  # (chunks, streams)
    log_p = np.full((num_chunks, space.num_states), -np.inf)
    counts = np.asarray(counts)
    for s in range(space.num_states):
        size = int(space.state_size[s])
        rows = counts == size
        if not rows.any():
            continue
        total = np.zeros(int(rows.sum()))
        for c in range(size):
            g = space.speaker_at[s, c]
            total += cross[rows, c, g] - moment[g] + base[rows, c]
        log_p[rows, s] = fa * total
    return log_p


def forward_backward(log_emissions, pi, loop_prob):
    """Exact state posteriors under the loop-mixture transition model.

    The transition kernel (1 - p) * pi + p * I factorizes into a shared
    rank-one entry term and a diagonal loop term, so each pass is
    O(chunks * states) instead of quadratic in states.  Everything runs in
    the log domain.

    Returns:
        gamma: (chunks, states) posteriors, rows summing to 1.
        log_evidence: log of the total path probability.
        entry_counts: per-state expected number of entries through the
            non-emitting node (initial step included); this is the
            sufficient statistic for re-estimating pi.
    """
    loge = as_float_array(log_emissions, "log_emissions", ndim=2)
    num_chunks, num_states = loge.shape
    if np.any(np.all(np.isneginf(loge), axis=1)):
        raise InfeasibleChunkError("a chunk has no state with finite emission score")
    log_pi = np.log(np.asarray(pi, dtype=np.float64))
    log_loop = math.log(loop_prob)
    log_entry = math.log1p(-loop_prob)

    log_alpha = np.empty((num_chunks, num_states))
    fwd_total = np.empty(num_chunks)
    log_alpha[0] = log_pi + loge[0]
    fwd_total[0] = _logsumexp(log_alpha[0], axis=-1)
    for t in range(1, num_chunks):
        stay = log_loop + log_alpha[t - 1]
        enter = log_entry + log_pi + fwd_total[t - 1]
        log_alpha[t] = loge[t] + np.logaddexp(stay, enter)
        fwd_total[t] = _logsumexp(log_alpha[t], axis=-1)

    log_beta = np.zeros((num_chunks, num_states))
    for t in range(num_chunks - 2, -1, -1):
        ahead = loge[t + 1] + log_beta[t + 1]
        total = _logsumexp(log_pi + ahead, axis=-1)
        log_beta[t] = np.logaddexp(log_loop + ahead, log_entry + total)

    log_evidence = fwd_total[-1]
    gamma = np.exp(log_alpha + log_beta - log_evidence)
    gamma[gamma < _GAMMA_FLOOR] = 0.0

    entry_counts = gamma[0].copy()
    if num_chunks > 1:
        log_ent = (
            log_entry
            + log_pi[None, :]
            + loge[1:]
            + log_beta[1:]
            + fwd_total[:-1, None]
            - log_evidence
        )
        entry_counts += np.exp(log_ent).sum(axis=0)
    return gamma, float(log_evidence), entry_counts


def update_pi(entry_counts, loop_prob, drop_eps):
    """Re-estimate state priors and drop states with collapsed prior.

    Returns (HmmParams over the kept states, boolean keep mask).
    """
    total = entry_counts.sum()
    if total <= 0.0:
        raise DegenerateModelError("no entry mass on any state")
    pi = entry_counts / total
    keep = pi >= drop_eps
    if not keep.any():
        raise DegenerateModelError("every state fell below the drop threshold")
    pi = pi[keep]
    return HmmParams(pi=pi / pi.sum(), loop_prob=loop_prob), keep


def gaussian_prior_kl(posteriors):
    """Total KL divergence of the speaker posteriors from the unit prior."""
    prec = posteriors.precision
    per_dim = 1.0 / prec + posteriors.mean**2 - 1.0 + np.log(prec)
    return 0.5 * float(per_dim.sum())


def elbo(log_evidence, posteriors, fb):
    """Variational objective the update cycle coordinate-ascends.

    The chain part is the forward-pass evidence over the scaled emissions;
    the speaker part is the prior KL weighted by fb.  The posterior and
    occupancy updates above are its exact coordinate maximizers, so it is
    non-decreasing over full cycles.
    """
    return log_evidence - fb * gaussian_prior_kl(posteriors)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def _canonical_init_labels(init_labels):
    labels = np.asarray(init_labels, dtype=np.int64)
    mapping = {}
    out = np.empty_like(labels)
    for i, lab in enumerate(labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out, len(mapping)


class MultiStreamVbx(BaseEstimator):
    """Clusters (chunk, stream) embeddings with the tuple-state HMM.

    Parameters
    ----------
    phi : array of between-speaker variances in the projected space.
    fa : acoustic scale on the emission log-likelihoods.
    fb : speaker-prior scale; larger values shrink the speaker count.
    loop_prob : self-transition probability of the chunk chain.
    max_iters : update cycles; 0 returns the initial hard labels untouched.
    elbo_rel_tol : relative objective change that stops iteration.
    pi_drop_eps : prior mass below which a state is removed.
    init_smoothing : occupancy mass spread off the initial hard state.
    keep_history : store per-iteration gamma/pi snapshots on ``history_``.

    Attributes (after fit)
    ----------------------
    labels_ : (chunks, streams) speaker ids, INACTIVE on silent streams.
    n_speakers_ : number of distinct speakers in the hard labels.
    gamma_ : (chunks, num_states) occupancies, zero rows for silent chunks.
    pi_ : priors over the retained states.
    retained_states_ : boolean mask over the full state enumeration.
    elbo_trace_ : objective value per cycle.
    state_space_ : the StateSpace the model ran over.
    """

    def __init__(
        self,
        phi=None,
        fa=0.4,
        fb=17.0,
        loop_prob=0.8,
        max_iters=40,
        elbo_rel_tol=1e-6,
        pi_drop_eps=1e-6,
        init_smoothing=0.1,
        keep_history=False,
    ):
        self.phi = phi
        self.fa = fa
        self.fb = fb
        self.loop_prob = loop_prob
        self.max_iters = max_iters
        self.elbo_rel_tol = elbo_rel_tol
        self.pi_drop_eps = pi_drop_eps
        self.init_smoothing = init_smoothing
        self.keep_history = keep_history

    def fit(self, X, counts, init_labels):
        """Run inference.

        Args:
            X: (chunks, max_streams, dim) projected embeddings; entries at
                stream positions >= counts[t] are ignored.
            counts: per-chunk active stream counts.
            init_labels: flat initial cluster ids over active streams, in
                chunk order then stream order.
        """
        X = as_float_array(X, "X", ndim=3)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (X.shape[0],):
            raise ValueError("counts must have one entry per chunk")
        phi = as_float_array(self.phi, "phi", ndim=1)
        if phi.shape[0] != X.shape[2]:
            raise ValueError("phi must match the embedding dimension")
        labels, num_init = _canonical_init_labels(init_labels)
        if len(labels) != int(counts.sum()):
            raise ValueError("init_labels must cover exactly the active streams")

        kept = np.flatnonzero(counts > 0)
        num_chunks, max_streams = X.shape[:2]
        self.history_ = []
        if kept.size == 0:
            self.state_space_ = None
            self.labels_ = np.full((num_chunks, max_streams), INACTIVE, dtype=np.int64)
            self.n_speakers_ = 0
            self.gamma_ = np.zeros((num_chunks, 0))
            self.pi_ = np.zeros(0)
            self.retained_states_ = np.zeros(0, dtype=bool)
            self.elbo_trace_ = []
            self.retained_trace_ = []
            return self

        space = build_state_space(num_init, int(counts.max()))
        assignment = ClusterAssignment(labels=labels, num_clusters=num_init)
        gamma = init_occupancy(assignment, counts, space, self.init_smoothing)

        active = np.arange(max_streams)[None, :] < counts[kept, None]
        x = np.where(active[:, :, None], X[kept], 0.0)
        rho = x * np.sqrt(phi)[None, None, :]
        kept_counts = counts[kept]

        num_states = space.num_states
        retained = np.arange(num_states)
        pi = np.full(num_states, 1.0 / num_states)
        elbo_trace = []
        retained_trace = []
        posteriors = None
        log_evidence = None

        for _ in range(self.max_iters):
            posteriors = update_speaker_posteriors(
                space, gamma, rho, phi, self.fa, self.fb
            )
            loge = state_log_emissions(
                space, posteriors, rho, x, phi, kept_counts, self.fa
            )
            gamma_r, log_evidence, entry_counts = forward_backward(
                loge[:, retained], pi, self.loop_prob
            )
            gamma = np.zeros((kept.size, num_states))
            gamma[:, retained] = gamma_r
            params, keep = update_pi(entry_counts, self.loop_prob, self.pi_drop_eps)
            retained = retained[keep]
            pi = params.pi
            retained_trace.append(len(retained))
            value = elbo(log_evidence, posteriors, self.fb)
            elbo_trace.append(value)
            if self.keep_history:
                self.history_.append(
                    {"gamma": gamma.copy(), "pi": pi.copy(), "retained": retained.copy()}
                )
            if (
                len(elbo_trace) >= 2
                and abs(elbo_trace[-1] - elbo_trace[-2])
                < self.elbo_rel_tol * abs(elbo_trace[-2])
            ):
                break

        labels_full = np.full((num_chunks, max_streams), INACTIVE, dtype=np.int64)
        if self.max_iters == 0:
            flat = 0
            for t in kept:
                for c in range(counts[t]):
                    labels_full[t, c] = labels[flat]
                    flat += 1
        else:
            best = np.argmax(gamma, axis=1)
            for row, t in enumerate(kept):
                tup = space.states[best[row]]
                if len(tup) != counts[t]:
                    raise InfeasibleChunkError(
                        f"chunk {t}: argmax state size {len(tup)} != count {counts[t]}"
                    )
                labels_full[t, : counts[t]] = tup

        gamma_full = np.zeros((num_chunks, num_states))
        gamma_full[kept] = gamma
        retained_mask = np.zeros(num_states, dtype=bool)
        retained_mask[retained] = True

        self.state_space_ = space
        self.labels_ = labels_full
        self.n_speakers_ = len(set(labels_full[labels_full != INACTIVE].tolist()))
        self.gamma_ = gamma_full
        self.pi_ = pi
        self.retained_states_ = retained_mask
        self.elbo_trace_ = elbo_trace
        self.retained_trace_ = retained_trace
        return self

    def fit_predict(self, X, counts, init_labels):
        return self.fit(X, counts, init_labels).labels_


class SingleStreamVbx(BaseEstimator):
    """One-speaker-per-chunk clustering, the classic embedding-chain model.

    Same hyperparameters as :class:`MultiStreamVbx`.  States coincide with
    speakers, so the update equations are implemented directly on dense
    per-speaker arrays without the tuple machinery.  Inputs must have at
    most one active stream per chunk.
    """

    def __init__(
        self,
        phi=None,
        fa=0.4,
        fb=17.0,
        loop_prob=0.8,
        max_iters=40,
        elbo_rel_tol=1e-6,
        pi_drop_eps=1e-6,
        init_smoothing=0.1,
        keep_history=False,
    ):
        self.phi = phi
        self.fa = fa
        self.fb = fb
        self.loop_prob = loop_prob
        self.max_iters = max_iters
        self.elbo_rel_tol = elbo_rel_tol
        self.pi_drop_eps = pi_drop_eps
        self.init_smoothing = init_smoothing
        self.keep_history = keep_history

    def fit(self, X, counts, init_labels):
        X = as_float_array(X, "X", ndim=3)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.max(initial=0) > 1:
            raise ValueError("single-stream model requires at most one active stream")
        phi = as_float_array(self.phi, "phi", ndim=1)
        labels, num_speakers = _canonical_init_labels(init_labels)

        kept = np.flatnonzero(counts > 0)
        num_chunks, max_streams = X.shape[:2]
        self.history_ = []
        if kept.size == 0:
            self.labels_ = np.full((num_chunks, max_streams), INACTIVE, dtype=np.int64)
            self.n_speakers_ = 0
            self.gamma_ = np.zeros((num_chunks, 0))
            self.pi_ = np.zeros(0)
            self.retained_states_ = np.zeros(0, dtype=bool)
            self.elbo_trace_ = []
            self.retained_trace_ = []
            return self

        x = X[kept, 0, :]
        rho = x * np.sqrt(phi)[None, :]
        dim = x.shape[1]
        scale = self.fa / self.fb

        if num_speakers == 1:
            gamma = np.ones((kept.size, 1))
        else:
            gamma = np.full(
                (kept.size, num_speakers), self.init_smoothing / (num_speakers - 1)
            )
            gamma[np.arange(kept.size), labels] = 1.0 - self.init_smoothing

        retained = np.arange(num_speakers)
        pi = np.full(num_speakers, 1.0 / num_speakers)
        elbo_trace = []
        retained_trace = []

        for _ in range(self.max_iters):
            occupancy = gamma.sum(axis=0)
            precision = 1.0 + scale * occupancy[:, None] * phi[None, :]
            mean = scale * (gamma.T @ rho) / precision
            posteriors = SpeakerPosteriors(mean=mean, precision=precision)
            loge = self.fa * (
                rho @ mean.T
                - 0.5 * ((1.0 / precision + mean**2) @ phi)[None, :]
                - 0.5 * dim * LOG_2PI
                - 0.5 * np.sum(x * x, axis=1)[:, None]
            )
            gamma_r, log_evidence, entry_counts = forward_backward(
                loge[:, retained], pi, self.loop_prob
            )
            gamma = np.zeros((kept.size, num_speakers))
            gamma[:, retained] = gamma_r
            params, keep = update_pi(entry_counts, self.loop_prob, self.pi_drop_eps)
            retained = retained[keep]
            pi = params.pi
            retained_trace.append(len(retained))
            value = elbo(log_evidence, posteriors, self.fb)
            elbo_trace.append(value)
            if self.keep_history:
                self.history_.append(
                    {"gamma": gamma.copy(), "pi": pi.copy(), "retained": retained.copy()}
                )
            if (
                len(elbo_trace) >= 2
                and abs(elbo_trace[-1] - elbo_trace[-2])
                < self.elbo_rel_tol * abs(elbo_trace[-2])
            ):
                break

        labels_full = np.full((num_chunks, max_streams), INACTIVE, dtype=np.int64)
        if self.max_iters == 0:
            labels_full[kept, 0] = labels
        else:
            labels_full[kept, 0] = np.argmax(gamma, axis=1)

        gamma_full = np.zeros((num_chunks, num_speakers))
        gamma_full[kept] = gamma
        retained_mask = np.zeros(num_speakers, dtype=bool)
        retained_mask[retained] = True
        self.labels_ = labels_full
        self.n_speakers_ = len(set(labels_full[labels_full != INACTIVE].tolist()))
        self.gamma_ = gamma_full
        self.pi_ = pi
        self.retained_states_ = retained_mask
        self.elbo_trace_ = elbo_trace
        self.retained_trace_ = retained_trace
        return self

    def fit_predict(self, X, counts, init_labels):
        return self.fit(X, counts, init_labels).labels_


# ---------------------------------------------------------------------------
# Recording-level orchestration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VbTrace:
    """Diagnostics of one inference run."""

    elbo: tuple
    gamma: np.ndarray
    retained_states: np.ndarray
    retained_counts: tuple  # surviving state count after each cycle
    retained_speakers: frozenset


@dataclass(frozen=True)
class ClusteringResult:
    """Hard labels plus diagnostics for one recording."""

    labels: np.ndarray  # (chunks, streams), INACTIVE where silent
    num_speakers: int
    trace: VbTrace


def _project_active(recording, backend):
    counts = recording.active_counts
    num_chunks, max_streams = recording.num_chunks, recording.num_streams
    dim = len(backend.phi_)
    out = np.zeros((num_chunks, max_streams, dim))
    for t in range(num_chunks):
        k = int(counts[t])
        if k:
            out[t, :k] = backend.transform(recording.embeddings[t, :k])
    return out


def run_msvbx(recording, backend, init, config, keep_history=False):
    """Full multi-stream inference on one canonicalized recording.

    The recording must already carry active_counts (see
    :func:`msvbx.data.with_active_streams`); ``init`` is the constrained
    clustering of its active embeddings.
    """
    if recording.active_counts is None:
        raise ValueError("recording needs active-stream detection first")
    model = MultiStreamVbx(
        phi=backend.phi_,
        fa=config.fa,
        fb=config.fb,
        loop_prob=config.loop_prob,
        max_iters=config.max_iters,
        elbo_rel_tol=config.elbo_rel_tol,
        pi_drop_eps=config.pi_drop_eps,
        keep_history=keep_history,
    )
    model.fit(_project_active(recording, backend), recording.active_counts, init.labels)
    return _package_result(model)


def run_single_stream_vbx(recording, backend, init, config, keep_history=False):
    """Single-stream inference; recordings must have at most one active stream."""
    if recording.active_counts is None:
        raise ValueError("recording needs active-stream detection first")
    model = SingleStreamVbx(
        phi=backend.phi_,
        fa=config.fa,
        fb=config.fb,
        loop_prob=config.loop_prob,
        max_iters=config.max_iters,
        elbo_rel_tol=config.elbo_rel_tol,
        pi_drop_eps=config.pi_drop_eps,
        keep_history=keep_history,
    )
    model.fit(_project_active(recording, backend), recording.active_counts, init.labels)
    return _package_result(model)


def _package_result(model):
    labels = model.labels_
    speakers = frozenset(int(g) for g in labels[labels != INACTIVE])
    trace = VbTrace(
        elbo=tuple(model.elbo_trace_),
        gamma=model.gamma_,
        retained_states=model.retained_states_,
        retained_counts=tuple(model.retained_trace_),
        retained_speakers=speakers,
    )
    return ClusteringResult(labels=labels, num_speakers=model.n_speakers_, trace=trace)
