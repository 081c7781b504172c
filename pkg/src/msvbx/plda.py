"""Embedding backend: length normalization, LDA reduction, two-covariance PLDA.

The trained backend maps a raw front-end embedding into a space where the
within-speaker covariance is the identity and the between-speaker
covariance is diagonal.  The diagonal ``phi`` is what the HMM emission
model consumes; the square root of ``phi`` plays the role of the speaker
subspace.
"""

import json
import warnings

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array

from .errors import DegenerateInputError
from .validation import as_float_array

_RIDGE_SCALE = 1e-6
# condition threshold below which the within-class scatter is treated as
# numerically singular and ridged
_SINGULAR_RTOL = 1e-10


def l2_normalize(v):
    """Scale a vector (or rows of a matrix) to unit Euclidean norm."""
    arr = as_float_array(v, "v")
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise DegenerateInputError("cannot length-normalize a zero vector")
    return arr / norms


def _ridge_if_singular(mat):
    """Add a trace-scaled ridge only when the matrix is near singular.

    An unconditional ridge would bias the simultaneous diagonalization on
    clean data; rank-deficient scatter from small training sets still gets
    regularized.
    """
    eigvals = np.linalg.eigvalsh(mat)
    if eigvals[0] <= _SINGULAR_RTOL * max(eigvals[-1], 0.0) or eigvals[0] <= 0.0:
        dim = mat.shape[0]
        return mat + (_RIDGE_SCALE * np.trace(mat) / dim) * np.eye(dim)
    return mat


def _class_scatters(vectors, labels):
    """Pooled within-class and count-weighted between-class covariance.

    Within is the unbiased pooled estimate (n - num_classes denominator).
    Between is the method-of-moments estimate of the between-class
    covariance component, debiased for the within noise carried by the
    class means.
    """
    n, _ = vectors.shape
    classes, inverse = np.unique(labels, return_inverse=True)
    num_classes = len(classes)
    counts = np.bincount(inverse).astype(np.float64)
    means = np.zeros((num_classes, vectors.shape[1]))
    np.add.at(means, inverse, vectors)
    means /= counts[:, None]
    centered = vectors - means[inverse]
    if n <= num_classes:
        raise DegenerateInputError("need at least one class with >= 2 samples")
    within = centered.T @ centered / (n - num_classes)
    grand = counts @ means / n
    dev = means - grand
    ms_between = (counts[:, None] * dev).T @ dev
    if num_classes < 2:
        between = np.zeros_like(within)
    else:
        ms_between /= num_classes - 1
        n0 = (n - np.sum(counts**2) / n) / (num_classes - 1)
        between = (ms_between - within) / n0
    return within, between, np.asarray(grand), num_classes


def train_lda(vectors, labels, out_dim):
    """Fit an LDA projection by the generalized eigenproblem on the scatters.

    Columns of the returned matrix are generalized eigenvectors of
    (between, within) for the top ``out_dim`` eigenvalues, descending.
    ``out_dim`` is clamped to min(input_dim, num_classes - 1) with a
    warning.  Returns (lda_matrix, global_mean) where the mean lives in
    the projected space.
    """
    vectors = as_float_array(vectors, "vectors", ndim=2)
    labels = np.asarray(labels)
    within, between, _, num_classes = _class_scatters(vectors, labels)
    if num_classes < 2:
        raise DegenerateInputError("LDA needs at least two speakers")
    feasible = min(vectors.shape[1], num_classes - 1)
    if out_dim > feasible:
        warnings.warn(
            f"lda_dim {out_dim} exceeds feasible rank {feasible}; clamping",
            stacklevel=2,
        )
        out_dim = feasible
    within = _ridge_if_singular(within)
    eigvals, eigvecs = scipy.linalg.eigh(between, within)
    order = np.argsort(eigvals)[::-1][:out_dim]
    lda_matrix = eigvecs[:, order]
    global_mean = vectors.mean(axis=0) @ lda_matrix
    return lda_matrix, global_mean


def train_plda(vectors, labels):
    """Two-covariance PLDA on (already reduced) training vectors.

    Estimates the within- and between-speaker covariances and finds the
    transform that simultaneously maps the within to identity and the
    between to a diagonal.  Returns (whiten_transform, phi) with phi
    sorted descending and negative entries clamped to zero.
    """
    vectors = as_float_array(vectors, "vectors", ndim=2)
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise DegenerateInputError("PLDA needs at least two speakers")
    if counts.min() < 2:
        raise DegenerateInputError("every speaker needs at least two samples")
    within, between, _, _ = _class_scatters(vectors, labels)
    within = _ridge_if_singular(within)
    eigvals, eigvecs = scipy.linalg.eigh(between, within)
    order = np.argsort(eigvals)[::-1]
    phi = np.clip(eigvals[order], 0.0, None)
    return eigvecs[:, order], phi


class PldaBackend(BaseEstimator, TransformerMixin):
    """Trained embedding pipeline: L2 norm -> LDA -> center -> whiten.

    Parameters
    ----------
    lda_dim : int, default 32
        Target dimensionality of the LDA reduction.

    Attributes (after fit)
    ----------------------
    input_dim_ : int
    lda_matrix_ : (input_dim, lda_dim) projection
    global_mean_ : (lda_dim,) mean of projected training data
    whiten_transform_ : (lda_dim, lda_dim) simultaneous diagonalizer
    phi_ : (lda_dim,) between-speaker variances, descending
    """

    def __init__(self, lda_dim=32):
        self.lda_dim = lda_dim

    def fit(self, X, y):
        X = check_array(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError("X and y must have the same length")
        normed = l2_normalize(X)
        self.lda_matrix_, self.global_mean_ = train_lda(normed, y, self.lda_dim)
        reduced = normed @ self.lda_matrix_ - self.global_mean_
        self.whiten_transform_, self.phi_ = train_plda(reduced, y)
        self.input_dim_ = X.shape[1]
        return self

    def transform(self, X):
        """Project embeddings into the diagonalized PLDA space."""
        X = check_array(np.atleast_2d(X))
        if X.shape[1] != self.input_dim_:
            raise ValueError(
                f"expected {self.input_dim_}-dimensional embeddings, got {X.shape[1]}"
            )
        reduced = l2_normalize(X) @ self.lda_matrix_ - self.global_mean_
        return reduced @ self.whiten_transform_

    def project(self, v):
        """Single-vector convenience wrapper around transform."""
        return self.transform(np.asarray(v)[None, :])[0]

    def save(self, path):
        payload = {
            "input_dim": int(self.input_dim_),
            "lda_dim": int(self.lda_matrix_.shape[1]),
            "global_mean": self.global_mean_.tolist(),
            "lda_matrix": self.lda_matrix_.tolist(),
            "whiten_transform": self.whiten_transform_.tolist(),
            "phi": self.phi_.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        backend = cls(lda_dim=int(payload["lda_dim"]))
        backend.input_dim_ = int(payload["input_dim"])
        backend.lda_matrix_ = np.asarray(payload["lda_matrix"], dtype=np.float64)
        backend.global_mean_ = np.asarray(payload["global_mean"], dtype=np.float64)
        backend.whiten_transform_ = np.asarray(
            payload["whiten_transform"], dtype=np.float64
        )
        backend.phi_ = np.asarray(payload["phi"], dtype=np.float64)
        return backend
