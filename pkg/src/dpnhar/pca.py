"""Principal component reduction of fused ROI vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DimensionMismatch, InsufficientData, NonFiniteObservation, ValidationError

# relative slack when comparing cumulative explained variance to the target
_TARGET_SLACK = 1e-10


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray       # (d,)
    basis: np.ndarray      # (k, d), orthonormal rows
    explained: np.ndarray  # (k,), fraction of total variance per row

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]


def pca_fit(data, variance_target: float = 0.95) -> PcaModel:
    """Eigendecomposition of the sample covariance.

    Keeps the fewest leading directions whose cumulative explained variance
    reaches ``variance_target``. Each basis row is flipped so its
    largest-magnitude entry is positive. Constant data gives a 0-component model.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D data matrix, got shape {X.shape}")
    if X.shape[0] < 2:
        raise InsufficientData("PCA needs at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise NonFiniteObservation("data contains NaN or infinity")
    if not 0 < variance_target <= 1:
        raise ValidationError("variance_target must lie in (0, 1]")

    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (X.shape[0] - 1)
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1]
    eigval = np.clip(eigval[order], 0.0, None)
    eigvec = eigvec[:, order].T

    total = eigval.sum()
    dim = X.shape[1]
    if total <= 0 or np.all(centered == 0):
        return PcaModel(mean=mean, basis=np.zeros((0, dim)), explained=np.zeros(0))

    ratios = eigval / total
    cumulative = np.cumsum(ratios)
    k = int(np.searchsorted(cumulative, variance_target - _TARGET_SLACK) + 1)
    k = min(k, dim)
    basis = eigvec[:k].copy()
    lead = np.argmax(np.abs(basis), axis=1)
    basis *= np.sign(basis[np.arange(k), lead])[:, None]
    return PcaModel(mean=mean, basis=basis, explained=ratios[:k].copy())


def pca_project(model: PcaModel, v) -> np.ndarray:
    """``basis @ (v - mean)``; accepts a single vector or a ``(n, d)`` batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.input_dim:
        raise DimensionMismatch(f"expected dimension {model.input_dim}, got {v.shape[-1]}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteObservation("input contains NaN or infinity")
    return (v - model.mean) @ model.basis.T


def pca_unproject(model: PcaModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z @ model.basis + model.mean


class FusedPCA(TransformerMixin, BaseEstimator):
    """PCA over fused 32-vectors (or any fixed width).

    ``X`` may be an ``(n, d)`` matrix or a list of feature sequences, which
    are stacked step-wise for fitting.
    """

    def __init__(self, variance_target: float = 0.95):
        self.variance_target = variance_target

    @staticmethod
    def _stack(X) -> np.ndarray:
        if isinstance(X, np.ndarray) and X.ndim == 2:
            return X
        return np.concatenate([np.asarray(x, dtype=np.float64).reshape(-1, np.shape(x)[-1]) for x in X])

    def fit(self, X, y=None):
        self.model_ = pca_fit(self._stack(X), self.variance_target)
        self.n_components_ = self.model_.n_components
        self.explained_variance_ratio_ = self.model_.explained
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return pca_project(self.model_, self._stack(X))

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        return pca_unproject(self.model_, Z)
