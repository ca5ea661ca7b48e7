"""Input validation helpers shared by the estimators and functional API."""
from __future__ import annotations

import numpy as np

from .exceptions import (
    CorruptModel,
    DimensionMismatch,
    EmptySequence,
    NonFiniteObservation,
)

ROW_SUM_TOL = 1e-12


def check_observations(obs, n_features: int, *, min_length: int = 1) -> np.ndarray:
    """Return ``obs`` as a float64 ``(T, n_features)`` array, or raise.

    A 1-D input of length ``n_features`` is treated as a single step.
    """
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim == 1 and arr.size == n_features:
        arr = arr.reshape(1, n_features)
    if arr.ndim != 2 or arr.shape[1] != n_features:
        raise DimensionMismatch(
            f"expected observations of shape (T, {n_features}), got {arr.shape}"
        )
    if arr.shape[0] < min_length:
        raise EmptySequence(f"sequence has {arr.shape[0]} steps, need >= {min_length}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteObservation("observations contain NaN or infinity")
    return arr


def check_frame_pair(prev, cur) -> tuple[np.ndarray, np.ndarray]:
    prev = np.asarray(prev)
    cur = np.asarray(cur)
    if prev.ndim != 2 or prev.shape != cur.shape:
        raise DimensionMismatch(
            f"frames must be equal-shaped 2-D rasters, got {prev.shape} and {cur.shape}"
        )
    return prev, cur


def check_stochastic(arr, name: str, *, tol: float = ROW_SUM_TOL, exc=CorruptModel) -> None:
    """Raise ``exc`` unless every last-axis row of ``arr`` is a probability vector."""
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise exc(f"{name} has negative or non-finite entries")
    sums = arr.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > tol):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise exc(f"{name} rows do not sum to 1 (max deviation {worst:.3g})")


def check_variances(var, floor: float, name: str, *, exc=CorruptModel) -> None:
    var = np.asarray(var, dtype=np.float64)
    if not np.all(np.isfinite(var)) or np.any(var < floor):
        raise exc(f"{name} has variances below the floor {floor}")
