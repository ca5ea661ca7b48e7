"""Motion segmentation and per-ROI 8-component descriptors.

Each frame pair is reduced to a 32-vector: four ``ComponentFeatures`` blocks
(face, hand, body, leg) of

    [x_min_n, y_min_n, x_max_n, y_max_n, mean_change, fill_ratio, cx_off, cy_off]
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import (
    BoxOutOfBounds,
    DegenerateBox,
    DimensionMismatch,
    EmptySequence,
    TooFewFrames,
    ValidationError,
)
from .scene import FrameSequence
from .validation import check_frame_pair

N_COMPONENT_FEATURES = 8
FEATURE_NAMES = (
    "x_min_n", "y_min_n", "x_max_n", "y_max_n",
    "mean_change", "fill_ratio", "cx_off", "cy_off",
)
# positions inside a ComponentFeatures block
GEOMETRY_IDX = np.array([0, 1, 2, 3, 6, 7])
MOTION_IDX = np.array([4, 5])

DEFAULT_THRESHOLD = 12
DEFAULT_MIN_AREA = 25

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class RoiKind(IntEnum):
    """Body regions. The ordinal fixes the block order in fused vectors;
    HAND is 1 and is the tie-break component for voting."""

    FACE = 0
    HAND = 1
    BODY = 2
    LEG = 3

    @property
    def slug(self) -> str:
        return self.name.lower()


N_ROIS = len(RoiKind)
N_FUSED_FEATURES = N_ROIS * N_COMPONENT_FEATURES


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel box."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max or self.x_min < 0 or self.y_min < 0:
            raise ValidationError(f"invalid box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y_min, self.y_max + 1), slice(self.x_min, self.x_max + 1)

    def fits(self, width: int, height: int) -> bool:
        return self.x_max < width and self.y_max < height

    @classmethod
    def full_frame(cls, width: int, height: int) -> "BoundingBox":
        return cls(0, 0, width - 1, height - 1)


@dataclass(frozen=True)
class FeatureSequence:
    """``values`` is ``(n_steps, 32)``; ``short`` marks a truncated window.

    ``fingerprint`` identifies the extraction settings that produced it.
    """

    values: np.ndarray
    short: bool = False
    fingerprint: str | None = None

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != N_FUSED_FEATURES:
            raise DimensionMismatch(f"feature sequence must be (T, 32), got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.n_steps

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def block(self, roi: RoiKind) -> np.ndarray:
        start = int(roi) * N_COMPONENT_FEATURES
        return self.values[:, start:start + N_COMPONENT_FEATURES]


# ---------------------------------------------------------------- segmentation


def foreground_mask(prev, cur, threshold: int = DEFAULT_THRESHOLD) -> np.ndarray:
    """Boolean mask of pixels with ``|cur - prev| >= threshold``."""
    prev, cur = check_frame_pair(prev, cur)
    if not 1 <= threshold <= 255:
        raise ValidationError("threshold must lie in [1, 255]")
    diff = np.abs(cur.astype(np.int16) - prev.astype(np.int16))
    return diff >= threshold


def detect_body_box(mask, min_area: int = DEFAULT_MIN_AREA) -> BoundingBox | None:
    """Tight box of the largest 8-connected foreground component.

    Equal areas are resolved by the smaller ``(y_min, x_min)``. Returns None
    when the mask is empty or the winner is smaller than ``min_area``.
    """
    if min_area < 1:
        raise ValidationError("min_area must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return None
    areas = np.bincount(labels.ravel())[1:]
    best_area = int(areas.max())
    if best_area < min_area:
        return None
    slices = ndimage.find_objects(labels)
    candidates = []
    for label in np.flatnonzero(areas == best_area):
        ys, xs = slices[label]
        candidates.append((ys.start, xs.start, xs.stop - 1, ys.stop - 1))
    y0, x0, x1, y1 = min(candidates)
    return BoundingBox(x0, y0, x1, y1)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def partition_rois(body: BoundingBox) -> dict[RoiKind, BoundingBox]:
    """Split a body box into face, hand, body and leg sub-boxes.

    Vertical bands are cut at 15% / 55% of the box height (hand band ends at
    60%); every band keeps at least one row. The torso box takes the central
    60% of the width, the hand box the full width.
    """
    h, w = body.height, body.width
    if h < 4 or w < 4:
        raise DegenerateBox(f"body box {body.as_tuple()} is smaller than 4x4")
    face_end = max(_round_half_up(0.15 * h), 1)
    torso_end = min(max(_round_half_up(0.55 * h), face_end + 1), h - 1)
    face_end = min(face_end, torso_end - 1)
    hand_end = min(max(_round_half_up(0.60 * h), face_end + 1), h)
    col0 = _round_half_up(0.2 * w)
    col1 = max(_round_half_up(0.8 * w), col0 + 1)

    x0, y0, x1 = body.x_min, body.y_min, body.x_max
    return {
        RoiKind.FACE: BoundingBox(x0, y0, x1, y0 + face_end - 1),
        RoiKind.HAND: BoundingBox(x0, y0 + face_end, x1, y0 + hand_end - 1),
        RoiKind.BODY: BoundingBox(x0 + col0, y0 + face_end, x0 + col1 - 1, y0 + torso_end - 1),
        RoiKind.LEG: BoundingBox(x0, y0 + torso_end, x1, body.y_max),
    }


# ---------------------------------------------------------------- descriptors


def extract_component_features(prev, cur, roi: BoundingBox, mask) -> np.ndarray:
    """8-component descriptor of ``roi`` for one frame pair."""
    prev, cur = check_frame_pair(prev, cur)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != prev.shape:
        raise DimensionMismatch("mask and frames differ in shape")
    height, width = prev.shape
    if not roi.fits(width, height):
        raise BoxOutOfBounds(f"box {roi.as_tuple()} outside {width}x{height} frame")

    ys, xs = roi.slices()
    change = np.abs(cur[ys, xs].astype(np.int16) - prev[ys, xs].astype(np.int16))
    fg = mask[ys, xs]
    count = int(fg.sum())
    out = np.zeros(N_COMPONENT_FEATURES)
    out[0] = roi.x_min / width
    out[1] = roi.y_min / height
    out[2] = roi.x_max / width
    out[3] = roi.y_max / height
    out[4] = change.mean() / 255.0
    out[5] = count / fg.size
    if count:
        rows, cols = np.nonzero(fg)
        out[6] = (cols.mean() + 0.5) / roi.width - 0.5
        out[7] = (rows.mean() + 0.5) / roi.height - 0.5
    return out


def extract_pair_features(prev, cur, body: BoundingBox, mask) -> np.ndarray:
    rois = partition_rois(body)
    return np.concatenate([extract_component_features(prev, cur, rois[k], mask) for k in RoiKind])


def feature_fingerprint(threshold: int = DEFAULT_THRESHOLD, min_area: int = DEFAULT_MIN_AREA) -> str:
    return f"roi8/threshold={int(threshold)}/min_area={int(min_area)}"


def extract_sequence_features(
    frames: FrameSequence,
    threshold: int = DEFAULT_THRESHOLD,
    min_area: int = DEFAULT_MIN_AREA,
) -> FeatureSequence:
    """Fused 32-vectors for every consecutive frame pair.

    When no usable body box is found for a pair, the previous step's box is
    reused (the full frame at step 0).
    """
    raw = frames.frames if isinstance(frames, FrameSequence) else np.asarray(frames)
    if raw.ndim != 3 or raw.shape[0] < 2:
        raise TooFewFrames("need at least 2 frames to difference")
    n, height, width = raw.shape
    body = BoundingBox.full_frame(width, height)
    steps = np.empty((n - 1, N_FUSED_FEATURES))
    for t in range(1, n):
        prev, cur = raw[t - 1], raw[t]
        mask = foreground_mask(prev, cur, threshold)
        found = detect_body_box(mask, min_area)
        # boxes too thin to partition count as a missed detection
        if found is not None and found.width >= 4 and found.height >= 4:
            body = found
        steps[t - 1] = extract_pair_features(prev, cur, body, mask)
    return FeatureSequence(steps, fingerprint=feature_fingerprint(threshold, min_area))


# ---------------------------------------------------------------- CSV export


def features_to_csv(seq: FeatureSequence) -> str:
    lines = ["step,roi," + ",".join(f"f{i}" for i in range(N_COMPONENT_FEATURES))]
    for step in range(seq.n_steps):
        for roi in RoiKind:
            vals = ",".join(format(v, ".9g") for v in seq.block(roi)[step])
            lines.append(f"{step},{roi.slug},{vals}")
    return "\n".join(lines) + "\n"


def features_from_csv(text: str) -> FeatureSequence:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    n_steps = len(rows) // N_ROIS
    values = np.zeros((n_steps, N_FUSED_FEATURES))
    for row in rows:
        step, roi = int(row[0]), RoiKind[row[1].upper()]
        start = int(roi) * N_COMPONENT_FEATURES
        values[step, start:start + N_COMPONENT_FEATURES] = [float(v) for v in row[2:]]
    return FeatureSequence(values)


# ---------------------------------------------------------------- estimator


class RoiFeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer: list of frame sequences -> list of FeatureSequence.

    Parameters
    ----------
    threshold : int
        Differencing threshold in gray levels.
    min_area : int
        Minimum pixel area of the body component.
    """

    def __init__(self, threshold: int = DEFAULT_THRESHOLD, min_area: int = DEFAULT_MIN_AREA):
        self.threshold = threshold
        self.min_area = min_area

    def fit(self, X=None, y=None):
        if not 1 <= self.threshold <= 255:
            raise ValidationError("threshold must lie in [1, 255]")
        if self.min_area < 1:
            raise ValidationError("min_area must be >= 1")
        return self

    def transform(self, X) -> list[FeatureSequence]:
        if isinstance(X, FrameSequence):
            X = [X]
        if len(X) == 0:
            raise EmptySequence("no frame sequences given")
        return [extract_sequence_features(f, self.threshold, self.min_area) for f in X]

    @property
    def fingerprint(self) -> str:
        return feature_fingerprint(self.threshold, self.min_area)
