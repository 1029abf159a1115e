"""Embedding containers, seeded randomness, cosine geometry and PCA projection."""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import ValidationError, check_matrix, check_vector

__all__ = [
    "EmbeddingSet",
    "RandomSource",
    "PcaBasis",
    "PCAProjection",
    "cosine_similarity",
    "cosine_distance",
    "pca_fit",
    "pca_project",
    "pca_lift",
]


class RandomSource:
    """Seeded random stream backed by numpy's PCG64 bit generator.

    PCG64 output is specified bit-for-bit, so a given seed yields the same
    stream on every platform numpy supports.
    """

    algorithm = "pcg64"

    def __init__(self, seed=0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._seq = np.random.SeedSequence(seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    @classmethod
    def _from_sequence(cls, seq, seed):
        obj = cls.__new__(cls)
        obj.seed = seed
        obj._seq = seq
        obj.generator = np.random.Generator(np.random.PCG64(seq))
        return obj

    def spawn(self, n):
        """Independent child streams; deterministic in (seed, spawn order)."""
        return [RandomSource._from_sequence(s, self.seed) for s in self._seq.spawn(n)]

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def permutation(self, n):
        return self.generator.permutation(n)

    def uniform(self, size=None):
        return self.generator.random(size)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, algorithm={self.algorithm!r})"


def as_random_source(rng):
    if isinstance(rng, RandomSource):
        return rng
    if rng is None:
        return RandomSource(0)
    return RandomSource(int(rng))


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Labeled collection of equal-dimension vectors.

    ``vectors`` is an ``(n, dim)`` float64 array and ``labels`` holds one
    string class identifier per row.
    """

    vectors: np.ndarray
    labels: tuple
    counts: Counter = field(init=False, repr=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0 or vectors.shape[1] == 0:
            raise ValidationError(
                f"an EmbeddingSet needs at least one record of positive dimension, got shape {vectors.shape}"
            )
        labels = tuple(str(lab) for lab in self.labels)
        if len(labels) != vectors.shape[0]:
            raise ValidationError(f"{len(labels)} labels for {vectors.shape[0]} vectors")
        if not np.all(np.isfinite(vectors)):
            raise ValidationError("embedding values must be finite")
        vectors = vectors.copy()
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "counts", Counter(labels))

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def classes(self):
        """Class labels in order of first appearance."""
        return tuple(dict.fromkeys(self.labels))

    def class_indices(self):
        """Map each class to the array of its record indices."""
        out = {}
        for i, lab in enumerate(self.labels):
            out.setdefault(lab, []).append(i)
        return {lab: np.asarray(idx) for lab, idx in out.items()}

    def label_array(self):
        return np.asarray(self.labels, dtype=object)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=int)
        return EmbeddingSet(self.vectors[indices], tuple(self.labels[i] for i in indices))

    def with_labels(self, labels):
        return EmbeddingSet(self.vectors, tuple(labels))

    def scaled(self, factor):
        return EmbeddingSet(self.vectors * factor, self.labels)

    def equals(self, other):
        return (
            isinstance(other, EmbeddingSet)
            and self.labels == other.labels
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
        )


def _pair(a, b):
    a = check_vector(a, name="a")
    b = check_vector(b, dim=a.shape[0], name="b")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValidationError("cosine similarity is undefined for a zero-norm vector")
    return a, b, na, nb


def cosine_similarity(a, b):
    """Cosine of the angle between ``a`` and ``b``, clamped to [-1, 1]."""
    a, b, na, nb = _pair(a, b)
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def cosine_distance(a, b):
    return 1.0 - cosine_similarity(a, b)


def pairwise_cosine_similarity(X, Y):
    """Row-wise cosine similarity of aligned rows of ``X`` and ``Y``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    nx = np.linalg.norm(X, axis=-1)
    ny = np.linalg.norm(Y, axis=-1)
    if np.any(nx == 0) or np.any(ny == 0):
        raise ValidationError("cosine similarity is undefined for a zero-norm vector")
    return np.clip(np.sum(X * Y, axis=-1) / (nx * ny), -1.0, 1.0)


@dataclass(frozen=True, eq=False)
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]


def _fix_signs(components, tol=1e-12):
    # first coordinate with non-negligible magnitude is made positive
    comps = components.copy()
    for row in comps:
        nz = np.flatnonzero(np.abs(row) > tol)
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return comps


def pca_fit(data, n_components):
    """Fit a principal-component basis by thin SVD of the centred data.

    ``data`` may be an :class:`EmbeddingSet` or an ``(n, d)`` array.
    """
    X = data.vectors if isinstance(data, EmbeddingSet) else check_matrix(data, min_samples=2)
    n, d = X.shape
    if n < 2:
        raise ValidationError("PCA needs at least 2 records")
    n_components = int(n_components)
    if not 1 <= n_components <= min(n, d):
        raise ValidationError(f"n_components must be in [1, {min(n, d)}], got {n_components}")
    mean = X.mean(axis=0)
    Xc = X - mean
    total_var = np.sum(Xc * Xc) / (n - 1)
    if not total_var > 0:
        raise ValidationError("PCA on degenerate data: total variance is zero")
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    components = _fix_signs(vt[:n_components])
    explained = (s[:n_components] ** 2) / (n - 1)
    return PcaBasis(mean=mean, components=components, explained_variance=explained)


def pca_project(basis, x):
    """Coordinates of ``x - mean`` on the basis; accepts a vector or row matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.mean.shape[0]:
        raise ValidationError(f"input dimension {x.shape[-1]} does not match basis dimension {basis.mean.shape[0]}")
    return (x - basis.mean) @ basis.components.T


def pca_lift(basis, coords):
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[-1] != basis.n_components:
        raise ValidationError("coordinate dimension does not match the number of components")
    return coords @ basis.components + basis.mean


class PCAProjection(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`pca_fit` with a fixed sign convention."""

    def __init__(self, n_components=1):
        self.n_components = n_components

    def fit(self, X, y=None):
        self.basis_ = pca_fit(X, self.n_components)
        self.mean_ = self.basis_.mean
        self.components_ = self.basis_.components
        self.explained_variance_ = self.basis_.explained_variance
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = X.vectors if isinstance(X, EmbeddingSet) else X
        return pca_project(self.basis_, X)

    def inverse_transform(self, X):
        check_is_fitted(self, "basis_")
        return pca_lift(self.basis_, X)
