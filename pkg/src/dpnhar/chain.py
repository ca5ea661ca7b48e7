"""Log-space forward/backward recursions over a flat discrete state.

Both sequence models reduce to a single chain once their hidden state is
flattened, so the recursions live here and operate on batches of equal-length
sequences: ``log_emit`` has shape ``(N, T, J)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import EmptyTrainingSet, NumericalFailure, SequenceTooShort

LOG_2PI = float(np.log(2 * np.pi))


def logsumexp(a: np.ndarray, axis=None, keepdims: bool = False) -> np.ndarray:
    """``log(sum(exp(a)))`` along ``axis``; all ``-inf`` slices give ``-inf``."""
    a = np.asarray(a, dtype=np.float64)
    peak = np.max(a, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - peak), axis=axis, keepdims=True)) + peak
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out


def safe_log(p) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(p, dtype=np.float64))


def diag_gaussian_logpdf(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    """Log density of ``x (..., D)`` under K diagonal Gaussians -> ``(..., K)``."""
    diff = x[..., None, :] - mean
    return -0.5 * (np.sum(np.log(var), axis=-1) + mean.shape[-1] * LOG_2PI + np.sum(diff * diff / var, axis=-1))


@dataclass(frozen=True)
class ForwardResult:
    log_lik: float
    # entry t is log P(o_1 .. o_t)
    prefix_log_lik: np.ndarray


def forward(log_init: np.ndarray, log_trans: np.ndarray, log_emit: np.ndarray) -> np.ndarray:
    """Forward messages ``log alpha`` with the same shape as ``log_emit``."""
    alpha = np.empty_like(log_emit)
    alpha[:, 0] = log_init + log_emit[:, 0]
    for t in range(1, log_emit.shape[1]):
        alpha[:, t] = log_emit[:, t] + logsumexp(alpha[:, t - 1, :, None] + log_trans, axis=1)
    return alpha


def backward(log_trans: np.ndarray, log_emit: np.ndarray) -> np.ndarray:
    beta = np.zeros_like(log_emit)
    for t in range(log_emit.shape[1] - 2, -1, -1):
        beta[:, t] = logsumexp(log_trans + (log_emit[:, t + 1] + beta[:, t + 1])[:, None, :], axis=2)
    return beta


def forward_result(log_init, log_trans, log_emit_single: np.ndarray) -> ForwardResult:
    """Forward pass for one sequence, ``log_emit_single`` of shape ``(T, J)``."""
    alpha = forward(log_init, log_trans, log_emit_single[None])[0]
    prefix = logsumexp(alpha, axis=1)
    return ForwardResult(log_lik=float(prefix[-1]), prefix_log_lik=prefix)


@dataclass(frozen=True)
class BatchStats:
    """Posterior statistics for a batch of equal-length sequences."""

    log_lik: np.ndarray   # (N,)
    gamma: np.ndarray     # (N, T, J)
    xi_sum: np.ndarray    # (J, J), summed over sequences and steps


def forward_backward_batch(log_init, log_trans, log_emit) -> BatchStats:
    alpha = forward(log_init, log_trans, log_emit)
    beta = backward(log_trans, log_emit)
    log_lik = logsumexp(alpha[:, -1], axis=1)
    if not np.all(np.isfinite(log_lik)):
        raise NumericalFailure("forward pass returned -inf log-likelihood")
    gamma = np.exp(alpha + beta - log_lik[:, None, None])
    gamma /= gamma.sum(axis=2, keepdims=True)
    n_states = log_emit.shape[2]
    xi_sum = np.zeros((n_states, n_states))
    if log_emit.shape[1] > 1:
        log_xi = (
            alpha[:, :-1, :, None]
            + log_trans
            + (log_emit[:, 1:] + beta[:, 1:])[:, :, None, :]
            - log_lik[:, None, None, None]
        )
        xi = np.exp(log_xi)
        xi /= xi.sum(axis=(2, 3), keepdims=True)
        xi_sum = xi.sum(axis=(0, 1))
    return BatchStats(log_lik=log_lik, gamma=gamma, xi_sum=xi_sum)


# ---------------------------------------------------------------- training helpers


def check_training_set(sequences, n_features: int) -> list[np.ndarray]:
    from .validation import check_observations

    if sequences is None or len(sequences) == 0:
        raise EmptyTrainingSet("no training sequences")
    out = []
    for seq in sequences:
        arr = check_observations(seq, n_features)
        if arr.shape[0] < 2:
            raise SequenceTooShort("training sequences need at least 2 steps")
        out.append(arr)
    return out


def group_by_length(sequences: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Stack sequences into ``(N, T, D)`` batches, one per distinct length."""
    groups: dict[int, list[np.ndarray]] = {}
    for seq in sequences:
        groups.setdefault(seq.shape[0], []).append(seq)
    return [np.stack(groups[length]) for length in sorted(groups)]


def quantile_segments(length: int, n_segments: int) -> list[slice]:
    """Split ``range(length)`` into ``n_segments`` contiguous, near-equal pieces."""
    bounds = [(k * length) // n_segments for k in range(n_segments + 1)]
    return [slice(bounds[k], bounds[k + 1]) for k in range(n_segments)]


def segment_moments(sequences, n_segments: int, var_floor: float):
    """Pooled mean/variance of each time-quantile segment across sequences."""
    dim = sequences[0].shape[1]
    everything = np.concatenate(sequences)
    means = np.empty((n_segments, dim))
    variances = np.empty((n_segments, dim))
    for k in range(n_segments):
        parts = [seq[quantile_segments(len(seq), n_segments)[k]] for seq in sequences]
        pooled = np.concatenate(parts)
        if pooled.shape[0] == 0:
            pooled = everything
        means[k] = pooled.mean(axis=0)
        variances[k] = pooled.var(axis=0)
    return means, np.maximum(variances, var_floor)


def sticky_matrix(n: int, self_prob: float = 0.8) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    mat = np.full((n, n), (1.0 - self_prob) / (n - 1))
    np.fill_diagonal(mat, self_prob)
    return mat


def normalize_rows(counts: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Row-normalise expected counts; rows with no mass keep their old value."""
    sums = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        fresh = counts / sums
    return np.where(sums > 0, fresh, previous)


def weighted_moments(weights, data, prev_mean, prev_var, var_floor):
    """Gamma-weighted Gaussian re-estimation.

    ``weights`` is ``(n, K)``, ``data`` is ``(n, D)``. States with zero total
    weight keep their previous parameters.
    """
    totals = weights.sum(axis=0)
    mean = prev_mean.copy()
    var = prev_var.copy()
    live = totals > 0
    if np.any(live):
        w = weights[:, live]
        m = (w.T @ data) / totals[live, None]
        # centred second moment; E[x^2] - m^2 cancels badly for tiny variances
        sq = np.einsum("nk,nkd->kd", w, (data[:, None, :] - m[None]) ** 2)
        mean[live] = m
        var[live] = sq / totals[live, None]
    return mean, np.maximum(var, var_floor)


@dataclass(frozen=True)
class EmReport:
    iterations: int
    log_lik_trace: tuple[float, ...]
    converged: bool


def run_em(params, e_step: Callable, m_step: Callable, tol: float, max_iter: int):
    """Generic EM driver.

    ``e_step(params) -> (stats, total_log_lik)``; ``m_step(stats, params) -> params``.
    Stops when the relative improvement drops below ``tol``; the returned
    parameters are the ones whose likelihood was last evaluated on convergence.
    """
    trace: list[float] = []
    converged = False
    for _ in range(max_iter):
        stats, total = e_step(params)
        if not np.isfinite(total):
            raise NumericalFailure("training log-likelihood is not finite")
        trace.append(float(total))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol * abs(trace[-2]):
            converged = True
            break
        params = m_step(stats, params)
    return params, EmReport(iterations=len(trace), log_lik_trace=tuple(trace), converged=converged)
