"""Factored two-chain dynamic Bayesian network.

Hidden state per step is a pair (phase p, motion m). The phase chain drives the
geometry features ``[x_min_n, y_min_n, x_max_n, y_max_n, cx_off, cy_off]``; the
motion chain drives ``[mean_change, fill_ratio]`` and its transition depends on
the current phase:

    P(p'|p) = phase_trans[p, p']
    P(m'|m, p') = motion_trans[p', m, m']

Inference is exact on the flattened joint state ``j = p * M + m``.
"""
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
from .features import GEOMETRY_IDX, MOTION_IDX, N_COMPONENT_FEATURES
from .validation import check_observations, check_stochastic, check_variances

MAX_ENUMERATION = 10**6


@dataclass(frozen=True)
class DbnConfig:
    n_phase: int = 3
    n_motion: int = 3
    var_floor: float = 1e-6
    em_tol: float = 1e-6
    em_max_iter: int = 100
    seed: int = 0
    # extra randomly perturbed EM starts; the best final likelihood wins
    n_restarts: int = 0

    def __post_init__(self):
        if self.n_phase < 1 or self.n_motion < 1:
            raise InvalidConfig("n_phase and n_motion must be >= 1")
        if self.n_phase * self.n_motion > 64:
            raise InvalidConfig("n_phase * n_motion must be <= 64")
        if not self.var_floor > 0:
            raise InvalidConfig("var_floor must be positive")
        if self.em_max_iter < 1 or self.n_restarts < 0:
            raise InvalidConfig("em_max_iter must be >= 1 and n_restarts >= 0")


@dataclass(frozen=True, eq=False)
class DbnParams:
    phase_prior: np.ndarray   # (P,)
    phase_trans: np.ndarray   # (P, P)
    motion_prior: np.ndarray  # (M,)
    motion_trans: np.ndarray  # (P, M, M), indexed [new phase, old motion, new motion]
    geo_mean: np.ndarray      # (P, 6)
    geo_var: np.ndarray       # (P, 6)
    mot_mean: np.ndarray      # (M, 2)
    mot_var: np.ndarray       # (M, 2)
    kind: str = field(default="dbn", init=False)

    @property
    def n_phase(self) -> int:
        return self.phase_prior.shape[0]

    @property
    def n_motion(self) -> int:
        return self.motion_prior.shape[0]

    @property
    def n_states(self) -> int:
        return self.n_phase * self.n_motion

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "phase_prior": self.phase_prior,
            "phase_trans": self.phase_trans,
            "motion_prior": self.motion_prior,
            "motion_trans": self.motion_trans,
            "geo_mean": self.geo_mean,
            "geo_var": self.geo_var,
            "mot_mean": self.mot_mean,
            "mot_var": self.mot_var,
        }

    def validate(self, var_floor: float = 0.0, *, exc=None) -> "DbnParams":
        kw = {} if exc is None else {"exc": exc}
        P, M = self.n_phase, self.n_motion
        shapes = {
            "phase_trans": (P, P), "motion_trans": (P, M, M),
            "geo_mean": (P, 6), "geo_var": (P, 6), "mot_mean": (M, 2), "mot_var": (M, 2),
        }
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise (exc or InvalidConfig)(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for name in ("phase_prior", "phase_trans", "motion_prior", "motion_trans"):
            check_stochastic(getattr(self, name), name, **kw)
        check_variances(self.geo_var, var_floor, "geo_var", **kw)
        check_variances(self.mot_var, var_floor, "mot_var", **kw)
        if not (np.all(np.isfinite(self.geo_mean)) and np.all(np.isfinite(self.mot_mean))):
            raise (exc or InvalidConfig)("emission means must be finite")
        return self

    # joint-state view ------------------------------------------------------

    def joint_log_init(self) -> np.ndarray:
        return (chain.safe_log(self.phase_prior)[:, None] + chain.safe_log(self.motion_prior)[None, :]).ravel()

    def joint_log_trans(self) -> np.ndarray:
        P, M = self.n_phase, self.n_motion
        lp = chain.safe_log(self.phase_trans)      # [p, p']
        lm = chain.safe_log(self.motion_trans)     # [p', m, m']
        joint = lp[:, None, :, None] + np.transpose(lm, (1, 0, 2))[None, :, :, :]  # [p, m, p', m']
        return joint.reshape(P * M, P * M)

    def log_emission(self, obs: np.ndarray) -> np.ndarray:
        """``obs (..., 8)`` -> joint-state log emission ``(..., P*M)``."""
        geo = chain.diag_gaussian_logpdf(obs[..., GEOMETRY_IDX], self.geo_mean, self.geo_var)
        mot = chain.diag_gaussian_logpdf(obs[..., MOTION_IDX], self.mot_mean, self.mot_var)
        return (geo[..., :, None] + mot[..., None, :]).reshape(*obs.shape[:-1], -1)


def _as_obs(obs) -> np.ndarray:
    return check_observations(obs, N_COMPONENT_FEATURES)


# ---------------------------------------------------------------- initialisation


def dbn_init(config: DbnConfig, sequences) -> DbnParams:
    """Deterministic time-quantile initialisation with sticky transitions."""
    seqs = chain.check_training_set(sequences, N_COMPONENT_FEATURES)
    P, M = config.n_phase, config.n_motion
    geo_mean, geo_var = chain.segment_moments([s[:, GEOMETRY_IDX] for s in seqs], P, config.var_floor)
    mot_mean, mot_var = chain.segment_moments([s[:, MOTION_IDX] for s in seqs], M, config.var_floor)
    motion_trans = np.broadcast_to(chain.sticky_matrix(M), (P, M, M)).copy()
    return DbnParams(
        phase_prior=np.full(P, 1.0 / P),
        phase_trans=chain.sticky_matrix(P),
        motion_prior=np.full(M, 1.0 / M),
        motion_trans=motion_trans,
        geo_mean=geo_mean,
        geo_var=geo_var,
        mot_mean=mot_mean,
        mot_var=mot_var,
    )


# ---------------------------------------------------------------- inference


def dbn_forward(params: DbnParams, obs) -> ForwardResult:
    obs = _as_obs(obs)
    return chain.forward_result(params.joint_log_init(), params.joint_log_trans(), params.log_emission(obs))


@dataclass(frozen=True)
class DbnPosteriors:
    log_lik: float
    gamma: np.ndarray  # (T, P*M)
    xi: np.ndarray     # (T-1, P*M, P*M)
    n_phase: int
    n_motion: int

    @property
    def joint_gamma(self) -> np.ndarray:
        return self.gamma.reshape(-1, self.n_phase, self.n_motion)

    @property
    def phase_gamma(self) -> np.ndarray:
        return self.joint_gamma.sum(axis=2)

    @property
    def motion_gamma(self) -> np.ndarray:
        return self.joint_gamma.sum(axis=1)

    @property
    def phase_xi(self) -> np.ndarray:
        P, M = self.n_phase, self.n_motion
        return self.xi.reshape(-1, P, M, P, M).sum(axis=(2, 4))

    @property
    def motion_xi(self) -> np.ndarray:
        """Expected counts indexed ``[t, new phase, old motion, new motion]``."""
        P, M = self.n_phase, self.n_motion
        return np.transpose(self.xi.reshape(-1, P, M, P, M).sum(axis=1), (0, 2, 1, 3))


def dbn_forward_backward(params: DbnParams, obs) -> DbnPosteriors:
    obs = _as_obs(obs)
    log_init, log_trans = params.joint_log_init(), params.joint_log_trans()
    log_emit = params.log_emission(obs)[None]
    alpha = chain.forward(log_init, log_trans, log_emit)[0]
    beta = chain.backward(log_trans, log_emit)[0]
    log_lik = float(chain.logsumexp(alpha[-1]))
    gamma = np.exp(alpha + beta - log_lik)
    gamma /= gamma.sum(axis=1, keepdims=True)
    log_xi = alpha[:-1, :, None] + log_trans + (log_emit[0, 1:] + beta[1:])[:, None, :] - log_lik
    xi = np.exp(log_xi)
    if xi.size:
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    return DbnPosteriors(log_lik, gamma, xi, params.n_phase, params.n_motion)


# ---------------------------------------------------------------- enumeration oracle


def _enumerate_paths(params: DbnParams, obs: np.ndarray):
    """Log joint probability of every (phase path, motion path) pair.

    Deliberately shares no code with the recursions: each factor is scored
    straight from its own table with scipy's normal log-density.
    """
    P, M = params.n_phase, params.n_motion
    T = obs.shape[0]
    if (P * M) ** T > MAX_ENUMERATION:
        raise TooLargeForEnumeration(f"(P*M)^T = {(P * M) ** T} paths exceeds {MAX_ENUMERATION}")
    phase_paths = np.array(list(itertools.product(range(P), repeat=T)), dtype=int).reshape(-1, T)
    motion_paths = np.array(list(itertools.product(range(M), repeat=T)), dtype=int).reshape(-1, T)
    with np.errstate(divide="ignore"):
        log_pp = np.log(params.phase_prior)
        log_pt = np.log(params.phase_trans)
        log_mp = np.log(params.motion_prior)
        log_mt = np.log(params.motion_trans)

    geo = obs[:, GEOMETRY_IDX]
    mot = obs[:, MOTION_IDX]
    # per step, per state emission scores
    geo_score = np.array([
        [norm.logpdf(geo[t], params.geo_mean[p], np.sqrt(params.geo_var[p])).sum() for p in range(P)]
        for t in range(T)
    ])
    mot_score = np.array([
        [norm.logpdf(mot[t], params.mot_mean[m], np.sqrt(params.mot_var[m])).sum() for m in range(M)]
        for t in range(T)
    ])
    steps = np.arange(T)

    phase_lp = log_pp[phase_paths[:, 0]] + geo_score[steps, phase_paths].sum(axis=1)
    for t in range(1, T):
        phase_lp = phase_lp + log_pt[phase_paths[:, t - 1], phase_paths[:, t]]

    motion_lp = log_mp[motion_paths[:, 0]] + mot_score[steps, motion_paths].sum(axis=1)
    coupling = np.zeros((phase_paths.shape[0], motion_paths.shape[0]))
    for t in range(1, T):
        coupling += log_mt[phase_paths[:, t][:, None], motion_paths[:, t - 1][None, :], motion_paths[:, t][None, :]]
    total = phase_lp[:, None] + motion_lp[None, :] + coupling
    return phase_paths, motion_paths, total


def dbn_loglik_bruteforce(params: DbnParams, obs) -> float:
    """Sequence log-likelihood by summing over every hidden path."""
    obs = _as_obs(obs)
    _, _, total = _enumerate_paths(params, obs)
    return float(scipy_logsumexp(total))


def dbn_posterior_bruteforce(params: DbnParams, obs) -> np.ndarray:
    """Joint-state posterior marginals ``(T, P*M)`` by path enumeration."""
    obs = _as_obs(obs)
    phase_paths, motion_paths, total = _enumerate_paths(params, obs)
    post = np.exp(total - scipy_logsumexp(total))
    T, M = obs.shape[0], params.n_motion
    gamma = np.zeros((T, params.n_states))
    for t in range(T):
        joint = phase_paths[:, t][:, None] * M + motion_paths[:, t][None, :]
        np.add.at(gamma[t], joint.ravel(), post.ravel())
    return gamma


# ---------------------------------------------------------------- EM


def _e_step(params: DbnParams, batches):
    log_init, log_trans = params.joint_log_init(), params.joint_log_trans()
    stats = [chain.forward_backward_batch(log_init, log_trans, params.log_emission(b)) for b in batches]
    return stats, float(sum(s.log_lik.sum() for s in stats))


def _m_step(stats, params: DbnParams, batches, var_floor: float) -> DbnParams:
    P, M = params.n_phase, params.n_motion
    first = sum(s.gamma[:, 0].sum(axis=0) for s in stats).reshape(P, M)
    xi = sum(s.xi_sum for s in stats).reshape(P, M, P, M)
    gamma = np.concatenate([s.gamma.reshape(-1, P, M) for s in stats])
    data = np.concatenate([b.reshape(-1, b.shape[-1]) for b in batches])

    geo_mean, geo_var = chain.weighted_moments(
        gamma.sum(axis=2), data[:, GEOMETRY_IDX], params.geo_mean, params.geo_var, var_floor
    )
    mot_mean, mot_var = chain.weighted_moments(
        gamma.sum(axis=1), data[:, MOTION_IDX], params.mot_mean, params.mot_var, var_floor
    )
    return DbnParams(
        phase_prior=first.sum(axis=1) / first.sum(),
        phase_trans=chain.normalize_rows(xi.sum(axis=(1, 3)), params.phase_trans),
        motion_prior=first.sum(axis=0) / first.sum(),
        motion_trans=chain.normalize_rows(np.transpose(xi.sum(axis=0), (1, 0, 2)), params.motion_trans),
        geo_mean=geo_mean,
        geo_var=geo_var,
        mot_mean=mot_mean,
        mot_var=mot_var,
    )


def _perturbed(params: DbnParams, rng: np.random.Generator) -> DbnParams:
    return replace(
        params,
        geo_mean=params.geo_mean + 0.5 * np.sqrt(params.geo_var) * rng.standard_normal(params.geo_mean.shape),
        mot_mean=params.mot_mean + 0.5 * np.sqrt(params.mot_var) * rng.standard_normal(params.mot_mean.shape),
    )


def dbn_em_fit(config: DbnConfig, sequences) -> tuple[DbnParams, EmReport]:
    """Fit by EM from :func:`dbn_init`; see :class:`DbnConfig` for stopping rules."""
    seqs = chain.check_training_set(sequences, N_COMPONENT_FEATURES)
    batches = chain.group_by_length(seqs)
    start = dbn_init(config, seqs)

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
        candidate = fit_from(_perturbed(start, rng))
        if candidate[1].log_lik_trace[-1] > best[1].log_lik_trace[-1]:
            best = candidate
    return best


# ---------------------------------------------------------------- estimator


class FactoredDBN(BaseEstimator):
    """Per-class sequence density model over 8-component ROI descriptors.

    ``fit`` takes a list of ``(T, 8)`` arrays; ``score_samples`` returns one
    log-likelihood per sequence.
    """

    def __init__(self, n_phase=3, n_motion=3, var_floor=1e-6, tol=1e-6, max_iter=100,
                 n_restarts=0, random_state=0):
        self.n_phase = n_phase
        self.n_motion = n_motion
        self.var_floor = var_floor
        self.tol = tol
        self.max_iter = max_iter
        self.n_restarts = n_restarts
        self.random_state = random_state

    def _config(self) -> DbnConfig:
        return DbnConfig(
            n_phase=self.n_phase, n_motion=self.n_motion, var_floor=self.var_floor,
            em_tol=self.tol, em_max_iter=self.max_iter, seed=self.random_state,
            n_restarts=self.n_restarts,
        )

    def fit(self, X, y=None):
        self.params_, self.report_ = dbn_em_fit(self._config(), X)
        return self

    def forward(self, obs) -> ForwardResult:
        check_is_fitted(self, "params_")
        return dbn_forward(self.params_, obs)

    def score_samples(self, X) -> np.ndarray:
        return np.array([self.forward(obs).log_lik for obs in X])

    def score(self, X, y=None) -> float:
        return float(self.score_samples(X).sum())
