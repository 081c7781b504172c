"""Agglomerative clustering with cannot-link groups, and occupancy init.

Embeddings coming from the same chunk must end up in different clusters.
The constraint is enforced by merge filtering: a pair of clusters is
mergeable only if no chunk contributes a member to both.  Average linkage
(UPGMA) over Euclidean distances, deterministic lexicographic tie-breaks.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import squareform, pdist
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils import check_array

from .errors import ConstraintViolationError
from .validation import as_float_array

INIT_SMOOTHING = 0.1


@dataclass(frozen=True)
class CannotLinkSet:
    """One index group per chunk; members may not share a cluster."""

    groups: tuple

    def __post_init__(self):
        seen = set()
        for group in self.groups:
            for idx in group:
                if idx in seen:
                    raise ValueError("cannot-link groups must be disjoint")
                seen.add(idx)

    @classmethod
    def from_active_counts(cls, active_counts):
        """Consecutive flat-index ranges, one group per chunk."""
        groups = []
        start = 0
        for count in active_counts:
            groups.append(frozenset(range(start, start + int(count))))
            start += int(count)
        return cls(groups=tuple(groups))

    def chunk_of(self, n):
        """Map flat index -> chunk id (-1 when ungrouped), length n."""
        out = np.full(n, -1, dtype=np.int64)
        for chunk, group in enumerate(self.groups):
            for idx in group:
                out[idx] = chunk
        return out


@dataclass(frozen=True)
class ClusterAssignment:
    """Flat-index cluster labels plus the cluster count."""

    labels: np.ndarray
    num_clusters: int

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))

    def check_constraints(self, constraints):
        for group in constraints.groups:
            members = list(group)
            if len(set(self.labels[members])) != len(members):
                raise ConstraintViolationError(
                    f"cannot-link group {sorted(members)} shares a cluster"
                )


def _relabel_by_first_appearance(raw_labels):
    mapping = {}
    labels = np.empty(len(raw_labels), dtype=np.int64)
    for i, lab in enumerate(raw_labels):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        labels[i] = mapping[lab]
    return labels, len(mapping)


def constrained_ahc(embeddings, constraints, threshold):
    """Bottom-up average-linkage clustering honoring cannot-link groups.

    Merging continues while the smallest distance among mergeable cluster
    pairs is <= threshold; equal distances break toward the lowest
    (i, j) cluster-index pair.  Labels are renumbered by first appearance.
    """
    X = as_float_array(embeddings, "embeddings", ndim=2)
    n = X.shape[0]
    if threshold <= 0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    if n == 0:
        return ClusterAssignment(labels=np.empty(0, dtype=np.int64), num_clusters=0)
    if n == 1:
        return ClusterAssignment(labels=np.zeros(1, dtype=np.int64), num_clusters=1)

    dist = squareform(pdist(X))
    np.fill_diagonal(dist, np.inf)
    chunk_of = constraints.chunk_of(n)
    grouped = chunk_of >= 0
    conflict = (
        (chunk_of[:, None] == chunk_of[None, :]) & grouped[:, None] & grouped[None, :]
    )
    np.fill_diagonal(conflict, False)

    upper = np.triu(np.ones((n, n), dtype=bool), 1)
    sizes = np.ones(n)
    alive = np.ones(n, dtype=bool)
    owner = np.arange(n)  # flat index -> current cluster slot (min member index)

    while alive.sum() > 1:
        pair_ok = upper & alive[:, None] & alive[None, :] & ~conflict
        candidate = np.where(pair_ok, dist, np.inf)
        flat = np.argmin(candidate)
        i, j = divmod(flat, n)
        best = candidate[i, j]
        if not np.isfinite(best) or best > threshold:
            break
        # UPGMA update: weighted average of the merged clusters' distances
        merged = (sizes[i] * dist[i] + sizes[j] * dist[j]) / (sizes[i] + sizes[j])
        dist[i] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        sizes[i] += sizes[j]
        conflict[i] |= conflict[j]
        conflict[:, i] |= conflict[:, j]
        conflict[i, i] = False
        alive[j] = False
        owner[owner == j] = i

    labels, num_clusters = _relabel_by_first_appearance(owner)
    assignment = ClusterAssignment(labels=labels, num_clusters=num_clusters)
    assignment.check_constraints(constraints)
    return assignment


class ConstrainedAgglomerative(BaseEstimator, ClusterMixin):
    """Estimator wrapper around :func:`constrained_ahc`.

    Parameters
    ----------
    threshold : float, default 0.8
        Distance above which no further merges happen.  Embeddings are
        expected to be length-normalized upstream so distances top out
        at 2.
    """

    def __init__(self, threshold=0.8):
        self.threshold = threshold

    def fit(self, X, y=None, groups=None):
        X = check_array(X, ensure_min_samples=0)
        if groups is None:
            groups = CannotLinkSet(groups=())
        assignment = constrained_ahc(X, groups, self.threshold)
        self.labels_ = assignment.labels
        self.n_clusters_ = assignment.num_clusters
        self.assignment_ = assignment
        return self

    def fit_predict(self, X, y=None, groups=None):
        return self.fit(X, groups=groups).labels_


def init_occupancy(assignment, active_counts, space, smoothing=INIT_SMOOTHING):
    """Initial state occupancies from hard cluster labels.

    Each chunk's ordered tuple of stream labels names exactly one HMM
    state; that state receives 1 - smoothing and the remainder spreads
    uniformly over the other states of the same active count.  Chunks with
    zero active streams are skipped (no row).

    Returns a (kept_chunks, num_states) row-stochastic matrix.
    """
    labels = assignment.labels
    rows = []
    flat = 0
    for count in active_counts:
        count = int(count)
        if count == 0:
            continue
        tup = tuple(int(labels[flat + c]) for c in range(count))
        flat += count
        if len(set(tup)) != len(tup):
            raise ConstraintViolationError(
                f"chunk label tuple {tup} repeats a speaker"
            )
        s = space.index_of.get(tup)
        if s is None:
            raise KeyError(f"no HMM state for label tuple {tup}")
        same_size = space.states_of_size[count]
        row = np.zeros(space.num_states)
        if len(same_size) == 1:
            row[s] = 1.0
        else:
            row[same_size] = smoothing / (len(same_size) - 1)
            row[s] = 1.0 - smoothing
        rows.append(row)
    if not rows:
        return np.zeros((0, space.num_states))
    return np.vstack(rows)
