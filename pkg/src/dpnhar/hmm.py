"""Single-chain Gaussian HMM baseline over the full 8-component descriptor."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp as scipy_logsumexp
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import chain
from .chain import EmReport, ForwardResult
from .exceptions import InvalidConfig, TooLargeForEnumeration
from .features import N_COMPONENT_FEATURES
from .validation import check_observations, check_stochastic, check_variances

MAX_ENUMERATION = 10**6


@dataclass(frozen=True)
class HmmConfig:
    n_states: int = 4
    var_floor: float = 1e-6
    em_tol: float = 1e-6
    em_max_iter: int = 100
    seed: int = 0
    n_restarts: int = 0

    def __post_init__(self):
        if not 1 <= self.n_states <= 64:
            raise InvalidConfig("n_states must lie in [1, 64]")
        if not self.var_floor > 0:
            raise InvalidConfig("var_floor must be positive")
        if self.em_max_iter < 1 or self.n_restarts < 0:
            raise InvalidConfig("em_max_iter must be >= 1 and n_restarts >= 0")


@dataclass(frozen=True, eq=False)
class HmmParams:
    prior: np.ndarray  # (S,)
    trans: np.ndarray  # (S, S)
    mean: np.ndarray   # (S, 8)
    var: np.ndarray    # (S, 8)
    kind: str = field(default="hmm", init=False)

    @property
    def n_states(self) -> int:
        return self.prior.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"prior": self.prior, "trans": self.trans, "mean": self.mean, "var": self.var}

    def validate(self, var_floor: float = 0.0, *, exc=None) -> "HmmParams":
        kw = {} if exc is None else {"exc": exc}
        S = self.n_states
        for name, shape in {"trans": (S, S), "mean": (S, 8), "var": (S, 8)}.items():
            if getattr(self, name).shape != shape:
                raise (exc or InvalidConfig)(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        check_stochastic(self.prior, "prior", **kw)
        check_stochastic(self.trans, "trans", **kw)
        check_variances(self.var, var_floor, "var", **kw)
        if not np.all(np.isfinite(self.mean)):
            raise (exc or InvalidConfig)("emission means must be finite")
        return self

    def log_emission(self, obs: np.ndarray) -> np.ndarray:
        return chain.diag_gaussian_logpdf(obs, self.mean, self.var)


def _as_obs(obs) -> np.ndarray:
    return check_observations(obs, N_COMPONENT_FEATURES)


def hmm_init(config: HmmConfig, sequences) -> HmmParams:
    seqs = chain.check_training_set(sequences, N_COMPONENT_FEATURES)
    S = config.n_states
    mean, var = chain.segment_moments(seqs, S, config.var_floor)
    return HmmParams(prior=np.full(S, 1.0 / S), trans=chain.sticky_matrix(S), mean=mean, var=var)


def hmm_forward(params: HmmParams, obs) -> ForwardResult:
    obs = _as_obs(obs)
    return chain.forward_result(chain.safe_log(params.prior), chain.safe_log(params.trans), params.log_emission(obs))


@dataclass(frozen=True)
class HmmPosteriors:
    log_lik: float
    gamma: np.ndarray  # (T, S)
    xi: np.ndarray     # (T-1, S, S)


def hmm_forward_backward(params: HmmParams, obs) -> HmmPosteriors:
    obs = _as_obs(obs)
    log_init, log_trans = chain.safe_log(params.prior), chain.safe_log(params.trans)
    log_emit = params.log_emission(obs)[None]
    alpha = chain.forward(log_init, log_trans, log_emit)[0]
    beta = chain.backward(log_trans, log_emit)[0]
    log_lik = float(chain.logsumexp(alpha[-1]))
    gamma = np.exp(alpha + beta - log_lik)
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi = np.exp(alpha[:-1, :, None] + log_trans + (log_emit[0, 1:] + beta[1:])[:, None, :] - log_lik)
    if xi.size:
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    return HmmPosteriors(log_lik, gamma, xi)


def hmm_loglik_bruteforce(params: HmmParams, obs) -> float:
    """Sequence log-likelihood by summing over all S^T state paths."""
    obs = _as_obs(obs)
    S, T = params.n_states, obs.shape[0]
    if S**T > MAX_ENUMERATION:
        raise TooLargeForEnumeration(f"S^T = {S**T} paths exceeds {MAX_ENUMERATION}")
    paths = np.array(list(itertools.product(range(S), repeat=T)), dtype=int).reshape(-1, T)
    with np.errstate(divide="ignore"):
        log_prior, log_trans = np.log(params.prior), np.log(params.trans)
    score = np.array([
        [norm.logpdf(obs[t], params.mean[s], np.sqrt(params.var[s])).sum() for s in range(S)]
        for t in range(T)
    ])
    total = log_prior[paths[:, 0]] + score[np.arange(T), paths].sum(axis=1)
    for t in range(1, T):
        total = total + log_trans[paths[:, t - 1], paths[:, t]]
    return float(scipy_logsumexp(total))


def _e_step(params: HmmParams, batches):
    log_init, log_trans = chain.safe_log(params.prior), chain.safe_log(params.trans)
    stats = [chain.forward_backward_batch(log_init, log_trans, params.log_emission(b)) for b in batches]
    return stats, float(sum(s.log_lik.sum() for s in stats))


def _m_step(stats, params: HmmParams, batches, var_floor: float) -> HmmParams:
    first = sum(s.gamma[:, 0].sum(axis=0) for s in stats)
    xi = sum(s.xi_sum for s in stats)
    gamma = np.concatenate([s.gamma.reshape(-1, params.n_states) for s in stats])
    data = np.concatenate([b.reshape(-1, b.shape[-1]) for b in batches])
    mean, var = chain.weighted_moments(gamma, data, params.mean, params.var, var_floor)
    return HmmParams(
        prior=first / first.sum(),
        trans=chain.normalize_rows(xi, params.trans),
        mean=mean,
        var=var,
    )


def hmm_em_fit(config: HmmConfig, sequences) -> tuple[HmmParams, EmReport]:
    """Baum-Welch from :func:`hmm_init`."""
    seqs = chain.check_training_set(sequences, N_COMPONENT_FEATURES)
    batches = chain.group_by_length(seqs)
    start = hmm_init(config, seqs)

    def fit_from(params):
        return chain.run_em(
            params,
            lambda p: _e_step(p, batches),
            lambda s, p: _m_step(s, p, batches, config.var_floor),
            config.em_tol,
            config.em_max_iter,
        )

    best = fit_from(start)
    rng = np.random.default_rng(config.seed)
    for _ in range(config.n_restarts):
        jitter = 0.5 * np.sqrt(start.var) * rng.standard_normal(start.mean.shape)
        candidate = fit_from(replace(start, mean=start.mean + jitter))
        if candidate[1].log_lik_trace[-1] > best[1].log_lik_trace[-1]:
            best = candidate
    return best


def sample_hmm(params: HmmParams, length: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(states (T,), observations (T, 8))`` from ``params``."""
    states = np.empty(length, dtype=int)
    states[0] = rng.choice(params.n_states, p=params.prior)
    for t in range(1, length):
        states[t] = rng.choice(params.n_states, p=params.trans[states[t - 1]])
    obs = params.mean[states] + np.sqrt(params.var[states]) * rng.standard_normal((length, params.mean.shape[1]))
    return states, obs


class GaussianHMM(BaseEstimator):
    """Diagonal-Gaussian HMM trained with Baum-Welch.

    Same interface as :class:`dpnhar.dbn.FactoredDBN`.
    """

    def __init__(self, n_states=4, var_floor=1e-6, tol=1e-6, max_iter=100, n_restarts=0, random_state=0):
        self.n_states = n_states
        self.var_floor = var_floor
        self.tol = tol
        self.max_iter = max_iter
        self.n_restarts = n_restarts
        self.random_state = random_state

    def _config(self) -> HmmConfig:
        return HmmConfig(
            n_states=self.n_states, var_floor=self.var_floor, em_tol=self.tol,
            em_max_iter=self.max_iter, seed=self.random_state, n_restarts=self.n_restarts,
        )

    def fit(self, X, y=None):
        self.params_, self.report_ = hmm_em_fit(self._config(), X)
        return self

    def forward(self, obs) -> ForwardResult:
        check_is_fitted(self, "params_")
        return hmm_forward(self.params_, obs)

    def score_samples(self, X) -> np.ndarray:
        return np.array([self.forward(obs).log_lik for obs in X])

    def score(self, X, y=None) -> float:
        return float(self.score_samples(X).sum())
