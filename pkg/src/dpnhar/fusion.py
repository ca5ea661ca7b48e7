"""From per-class sequence models to activity decisions.

A :class:`ModelBank` holds one fitted model per (activity, ROI). Each ROI
classifier picks the MAP class; the four ROI votes are fused by plurality, and
ties go to whichever tied class the hand classifier finds most probable.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import chain
from .chain import ForwardResult
from .dbn import DbnConfig, DbnParams, dbn_em_fit, dbn_forward
from .exceptions import (
    ClassMissing,
    EmptySequence,
    FingerprintMismatch,
    IncompleteBank,
    InvalidConfig,
    MissingComponent,
    NumericalFailure,
    ValidationError,
)
from .features import FeatureSequence, RoiKind
from .hmm import HmmConfig, HmmParams, hmm_em_fit, hmm_forward
from .scene import N_CLASSES, ActivityClass

MODEL_KINDS = ("dbn", "hmm")
TRAJECTORY_ROIS = ("face", "hand", "body", "leg", "fused")


# ---------------------------------------------------------------- types


def check_prior(prior) -> np.ndarray:
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (N_CLASSES,):
        raise ValidationError(f"class prior must have {N_CLASSES} entries")
    if np.any(prior < 0) or not np.all(np.isfinite(prior)) or abs(prior.sum() - 1.0) > 1e-12:
        raise ValidationError("class prior must be non-negative and sum to 1")
    return prior


def uniform_prior() -> np.ndarray:
    return np.full(N_CLASSES, 1.0 / N_CLASSES)


def empirical_prior(labels: Sequence[int]) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=N_CLASSES).astype(float)
    return counts / counts.sum()


@dataclass(frozen=True, eq=False)
class PosteriorVector:
    probs: np.ndarray

    @property
    def winner(self) -> ActivityClass:
        # np.argmax returns the first maximum, i.e. the smallest ordinal
        return ActivityClass(int(np.argmax(self.probs)))

    def __getitem__(self, cls) -> float:
        return float(self.probs[int(cls)])


@dataclass(frozen=True)
class FusionConfig:
    stride: int = 3
    cap: int = 8
    trajectory_roi: str = "hand"

    def __post_init__(self):
        if self.stride < 1 or self.cap < 1:
            raise InvalidConfig("stride and cap must be >= 1")
        if self.trajectory_roi not in TRAJECTORY_ROIS:
            raise InvalidConfig(f"trajectory_roi must be one of {TRAJECTORY_ROIS}")


@dataclass(frozen=True, eq=False)
class ModelBank:
    kind: str
    models: Mapping[tuple[ActivityClass, RoiKind], DbnParams | HmmParams]
    prior: np.ndarray
    fingerprint: str
    var_floor: float = 1e-6

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidConfig(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "prior", check_prior(self.prior))

    def check_complete(self) -> None:
        missing = [(c, r) for c in ActivityClass for r in RoiKind if (c, r) not in self.models]
        if missing:
            raise IncompleteBank(f"bank lacks {len(missing)} models, e.g. {missing[0]}")

    def forward(self, activity: ActivityClass, roi: RoiKind, obs) -> ForwardResult:
        params = self.models[(activity, roi)]
        return dbn_forward(params, obs) if self.kind == "dbn" else hmm_forward(params, obs)


@dataclass(frozen=True, eq=False)
class Decision:
    winner: ActivityClass
    component_votes: Mapping[RoiKind, ActivityClass]
    component_posteriors: Mapping[RoiKind, PosteriorVector]
    tie_broken: bool
    trajectory: np.ndarray  # (T, 5)
    short: bool = False


# ---------------------------------------------------------------- operations


def subsample_window(seq: FeatureSequence, stride: int = 3, cap: int = 8) -> FeatureSequence:
    """Keep steps 0, stride, 2*stride, ... up to ``cap`` of them.

    A window with fewer than ``cap`` steps is returned with ``short=True``.
    """
    if stride < 1 or cap < 1:
        raise InvalidConfig("stride and cap must be >= 1")
    if not isinstance(seq, FeatureSequence):
        seq = FeatureSequence(seq)
    if seq.n_steps == 0:
        raise EmptySequence("cannot subsample an empty sequence")
    picked = seq.values[::stride][:cap]
    return FeatureSequence(picked, short=picked.shape[0] < cap, fingerprint=seq.fingerprint)


def posteriors_from_loglik(log_lik, prior) -> np.ndarray:
    """Normalise ``prior * exp(log_lik)`` over the last axis in log space."""
    log_lik = np.asarray(log_lik, dtype=np.float64)
    joint = log_lik + chain.safe_log(prior)
    norm = chain.logsumexp(joint, axis=-1, keepdims=True)
    if not np.all(np.isfinite(norm)):
        raise NumericalFailure("every class has zero posterior mass")
    return np.exp(joint - norm)


def _block(obs, roi: RoiKind) -> np.ndarray:
    if isinstance(obs, FeatureSequence):
        return obs.block(roi)
    arr = np.asarray(obs, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 32:
        return arr[:, int(roi) * 8:(int(roi) + 1) * 8]
    return arr


def class_posteriors(bank: ModelBank, roi: RoiKind, obs, prior=None) -> PosteriorVector:
    """MAP posterior over activities from one ROI's 8-vector sequence.

    ``obs`` may be the ROI block itself ``(T, 8)`` or a fused sequence.
    """
    bank.check_complete()
    prior = bank.prior if prior is None else check_prior(prior)
    block = _block(obs, roi)
    log_lik = np.array([bank.forward(c, roi, block).log_lik for c in ActivityClass])
    return PosteriorVector(posteriors_from_loglik(log_lik, prior))


def posterior_trajectory(bank: ModelBank, roi: RoiKind, obs, prior=None) -> np.ndarray:
    """``(T, 5)`` matrix whose row t is the posterior given the first t+1 steps."""
    bank.check_complete()
    prior = bank.prior if prior is None else check_prior(prior)
    block = _block(obs, roi)
    prefix = np.stack([bank.forward(c, roi, block).prefix_log_lik for c in ActivityClass], axis=1)
    return posteriors_from_loglik(prefix, prior)


def component_vote(
    votes: Mapping[RoiKind, ActivityClass],
    posteriors: Mapping[RoiKind, PosteriorVector],
) -> tuple[ActivityClass, bool]:
    """Plurality over the four ROI votes with the hand tie-break.

    Returns ``(winner, tie_broken)``. Among classes tied for the most votes the
    one with the largest hand posterior wins; equal hand posteriors fall back
    to the smallest class ordinal.
    """
    for roi in RoiKind:
        if roi not in votes:
            raise MissingComponent(f"no vote from the {roi.slug} classifier")
    if RoiKind.HAND not in posteriors:
        raise MissingComponent("hand posterior is required for tie-breaking")
    tally = Counter(ActivityClass(votes[roi]) for roi in RoiKind)
    top = max(tally.values())
    tied = sorted(c for c, n in tally.items() if n == top)
    if len(tied) == 1:
        return tied[0], False
    hand = posteriors[RoiKind.HAND]
    best = max(tied, key=lambda c: (hand[c], -int(c)))
    return best, True


def classify_sequence(
    bank: ModelBank,
    features: FeatureSequence,
    prior=None,
    fusion: FusionConfig | None = None,
) -> Decision:
    fusion = fusion or FusionConfig()
    if not isinstance(features, FeatureSequence):
        features = FeatureSequence(features)
    if features.fingerprint is not None and features.fingerprint != bank.fingerprint:
        raise FingerprintMismatch(
            f"features from {features.fingerprint!r}, bank trained on {bank.fingerprint!r}"
        )
    prior = bank.prior if prior is None else check_prior(prior)
    window = subsample_window(features, fusion.stride, fusion.cap)
    posteriors = {roi: class_posteriors(bank, roi, window, prior) for roi in RoiKind}
    votes = {roi: p.winner for roi, p in posteriors.items()}
    winner, tie_broken = component_vote(votes, posteriors)
    if fusion.trajectory_roi == "fused":
        trajectory = np.mean([posterior_trajectory(bank, roi, window, prior) for roi in RoiKind], axis=0)
    else:
        trajectory = posterior_trajectory(bank, RoiKind[fusion.trajectory_roi.upper()], window, prior)
    return Decision(
        winner=winner,
        component_votes=votes,
        component_posteriors=posteriors,
        tie_broken=tie_broken,
        trajectory=trajectory,
        short=window.short,
    )


# ---------------------------------------------------------------- training


def fit_model(kind: str, config, sequences):
    if kind == "dbn":
        return dbn_em_fit(config or DbnConfig(), sequences)
    if kind == "hmm":
        return hmm_em_fit(config or HmmConfig(), sequences)
    raise InvalidConfig(f"unknown model kind {kind!r}")


def fit_bank(
    sequences: Sequence[FeatureSequence],
    labels: Sequence[int],
    kind: str = "dbn",
    model_config=None,
    fusion: FusionConfig | None = None,
    prior="uniform",
    fingerprint: str | None = None,
) -> ModelBank:
    """Fit one model per (activity, ROI) on subsampled training windows."""
    fusion = fusion or FusionConfig()
    if len(sequences) != len(labels):
        raise ValidationError("sequences and labels differ in length")
    if model_config is None:
        model_config = DbnConfig() if kind == "dbn" else HmmConfig()
    windows = [subsample_window(s, fusion.stride, fusion.cap) for s in sequences]
    if fingerprint is None:
        prints = {w.fingerprint for w in windows}
        fingerprint = prints.pop() if len(prints) == 1 else None
    if fingerprint is None:
        raise FingerprintMismatch("training sequences disagree on (or lack) a feature fingerprint")
    labels = [ActivityClass(int(y)) for y in labels]
    models = {}
    for activity in ActivityClass:
        group = [w for w, y in zip(windows, labels) if y == activity]
        if not group:
            raise ClassMissing(f"no training sequence for {activity.slug}")
        for roi in RoiKind:
            params, _ = fit_model(kind, model_config, [w.block(roi) for w in group])
            models[(activity, roi)] = params
    if isinstance(prior, str):
        if prior == "uniform":
            prior = uniform_prior()
        elif prior == "empirical":
            prior = empirical_prior([int(y) for y in labels])
        else:
            raise InvalidConfig(f"unknown prior mode {prior!r}")
    return ModelBank(kind=kind, models=models, prior=prior, fingerprint=fingerprint,
                     var_floor=model_config.var_floor)


class ActivityClassifier(ClassifierMixin, BaseEstimator):
    """Per-ROI MAP classifiers fused by majority vote.

    ``X`` is a list of :class:`FeatureSequence` (or ``(T, 32)`` arrays), ``y``
    the activity ordinals. ``predict_proba`` returns the mean of the four ROI
    posteriors; ``decide`` exposes the full :class:`Decision` records.
    """

    def __init__(self, kind="dbn", n_phase=3, n_motion=3, n_states=4, var_floor=1e-6, tol=1e-6,
                 max_iter=100, stride=3, cap=8, prior="uniform", trajectory_roi="hand",
                 fingerprint=None, random_state=0):
        self.kind = kind
        self.n_phase = n_phase
        self.n_motion = n_motion
        self.n_states = n_states
        self.var_floor = var_floor
        self.tol = tol
        self.max_iter = max_iter
        self.stride = stride
        self.cap = cap
        self.prior = prior
        self.trajectory_roi = trajectory_roi
        self.fingerprint = fingerprint
        self.random_state = random_state

    def _model_config(self):
        if self.kind == "dbn":
            return DbnConfig(n_phase=self.n_phase, n_motion=self.n_motion, var_floor=self.var_floor,
                             em_tol=self.tol, em_max_iter=self.max_iter, seed=self.random_state)
        if self.kind == "hmm":
            return HmmConfig(n_states=self.n_states, var_floor=self.var_floor, em_tol=self.tol,
                             em_max_iter=self.max_iter, seed=self.random_state)
        raise InvalidConfig(f"unknown model kind {self.kind!r}")

    def _fusion(self) -> FusionConfig:
        return FusionConfig(stride=self.stride, cap=self.cap, trajectory_roi=self.trajectory_roi)

    @staticmethod
    def _coerce(X, fingerprint=None) -> list[FeatureSequence]:
        out = []
        for x in X:
            if isinstance(x, FeatureSequence):
                out.append(x)
            else:
                out.append(FeatureSequence(x, fingerprint=fingerprint))
        return out

    def fit(self, X, y):
        fingerprint = self.fingerprint or "unspecified"
        seqs = self._coerce(X, fingerprint)
        self.bank_ = fit_bank(
            seqs, y, kind=self.kind, model_config=self._model_config(), fusion=self._fusion(),
            prior=self.prior, fingerprint=self.fingerprint or seqs[0].fingerprint or fingerprint,
        )
        self.classes_ = np.arange(N_CLASSES)
        return self

    def decide(self, X) -> list[Decision]:
        check_is_fitted(self, "bank_")
        return [classify_sequence(self.bank_, s, fusion=self._fusion())
                for s in self._coerce(X, self.bank_.fingerprint)]

    def predict(self, X) -> np.ndarray:
        return np.array([int(d.winner) for d in self.decide(X)])

    def predict_proba(self, X) -> np.ndarray:
        decisions = self.decide(X)
        return np.array([np.mean([d.component_posteriors[r].probs for r in RoiKind], axis=0) for d in decisions])
