"""Synthetic blob-actor scenes.

An actor is drawn from six primitives (head disc, torso rectangle, two arm
segments, two leg segments) plus an optional carried object. Each
:class:`ActivityClass` has a motion program that maps a frame index to a pose;
all per-sequence variation (start position, speed, timing) is drawn from
``SceneConfig.seed`` so rendering is a pure function of the config.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .exceptions import InvalidConfig

UINT64_MAX = 2**64 - 1

# gray levels per body part; neighbouring parts differ by >= 15 so that a
# part moving over another still registers as change
HEAD_LEVEL = 205
TORSO_LEVEL = 170
ARM_LEVEL = 188
LEG_LEVEL = 140
OBJECT_LEVEL = 240


class ActivityClass(IntEnum):
    WALK = 0
    SIT = 1
    LIFT = 2
    PUT_DOWN = 3
    NEUTRAL_STAND = 4

    @property
    def slug(self) -> str:
        return _SLUGS[self]

    @classmethod
    def from_slug(cls, name: str) -> "ActivityClass":
        key = name.strip().lower().replace("-", "").replace("_", "")
        for member, slug in _SLUGS.items():
            if key in (slug, member.name.lower().replace("_", "")):
                return member
        raise InvalidConfig(f"unknown activity {name!r}")


_SLUGS = {
    ActivityClass.WALK: "walk",
    ActivityClass.SIT: "sit",
    ActivityClass.LIFT: "lift",
    ActivityClass.PUT_DOWN: "putdown",
    ActivityClass.NEUTRAL_STAND: "stand",
}

N_CLASSES = len(ActivityClass)


def _check_seed(seed, name="seed"):
    if not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) <= UINT64_MAX:
        raise InvalidConfig(f"{name} must be an unsigned 64-bit integer, got {seed!r}")


@dataclass(frozen=True)
class SceneConfig:
    activity: ActivityClass = ActivityClass.NEUTRAL_STAND
    width: int = 160
    height: int = 120
    fps: int = 24
    n_frames: int = 48
    actor_scale: float = 0.6
    background_level: int = 60
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "activity", ActivityClass(self.activity))
        if self.width < 32 or self.height < 32:
            raise InvalidConfig("width and height must be >= 32")
        if self.n_frames < 2:
            raise InvalidConfig("n_frames must be >= 2")
        if self.fps < 1:
            raise InvalidConfig("fps must be >= 1")
        if not 0.2 <= self.actor_scale <= 0.9:
            raise InvalidConfig("actor_scale must lie in [0.2, 0.9]")
        if not 0 <= self.background_level <= 255:
            raise InvalidConfig("background_level must lie in [0, 255]")
        _check_seed(self.seed)

    @classmethod
    def paper_scale(cls, **kwargs) -> "SceneConfig":
        """640x480 preset matching the original recording resolution."""
        kwargs.setdefault("width", 640)
        kwargs.setdefault("height", 480)
        return cls(**kwargs)

    def with_(self, **changes) -> "SceneConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class NoiseConfig:
    pixel_sigma: float = 0.0
    illum_gradient: float = 0.0
    distractor_count: int = 0
    distractor_speed: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("pixel_sigma", "illum_gradient", "distractor_speed"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise InvalidConfig(f"{name} must be finite and >= 0, got {value!r}")
        if self.distractor_count < 0:
            raise InvalidConfig("distractor_count must be >= 0")
        _check_seed(self.seed)

    @property
    def is_identity(self) -> bool:
        return self.pixel_sigma == 0 and self.illum_gradient == 0 and self.distractor_count == 0


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """``frames`` is a ``(n_frames, height, width)`` uint8 array."""

    frames: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.frames, dtype=np.uint8)
        if arr.ndim != 3:
            raise InvalidConfig(f"frames must be 3-D (n, h, w), got shape {arr.shape}")
        if arr.shape[0] < 2:
            raise InvalidConfig("a frame sequence needs at least 2 frames")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def __len__(self):
        return self.n_frames

    def __eq__(self, other):
        if not isinstance(other, FrameSequence):
            return NotImplemented
        return self.frames.shape == other.frames.shape and np.array_equal(self.frames, other.frames)

    def tobytes(self) -> bytes:
        return self.frames.tobytes()


@dataclass(frozen=True)
class GroundTruth:
    activity: ActivityClass
    event_intervals: tuple[tuple[int, int], ...]
    # per frame (x_min, y_min, x_max, y_max), inclusive pixel indices
    actor_track: tuple[tuple[int, int, int, int], ...] = field(repr=False)


@dataclass(frozen=True)
class Pose:
    x: float
    drop: float = 0.0
    facing: int = 1
    leg_angles: tuple[float, float] = (0.0, 0.0)
    arm_angles: tuple[float, float] = (0.08, 0.08)
    carrying: bool = False
    # when set, legs are solved so the feet stay on the ground
    planted_feet: bool = False


@dataclass(frozen=True)
class _Body:
    """Skeleton dimensions in pixels for one actor height."""

    height: float
    ground: float

    @property
    def head_r(self):
        return 0.075 * self.height

    @property
    def torso_h(self):
        return 0.34 * self.height

    @property
    def torso_w(self):
        return 0.24 * self.height

    @property
    def leg_len(self):
        return self.height - 2 * self.head_r - self.torso_h

    @property
    def leg_w(self):
        return 0.08 * self.height

    @property
    def arm_len(self):
        return 0.36 * self.height

    @property
    def arm_w(self):
        return 0.065 * self.height

    @property
    def object_side(self):
        return 0.12 * self.height

    @property
    def max_drop(self):
        return 0.22 * self.height

    @property
    def reach(self):
        """Horizontal extent from the centre line with an arm held level."""
        return self.torso_w / 2 + self.arm_len + self.object_side


def _body_for(config: SceneConfig) -> _Body:
    return _Body(height=config.actor_scale * config.height, ground=config.height * 0.94)


# ---------------------------------------------------------------- motion programs


def motion_parameters(config: SceneConfig) -> dict:
    """Seed-derived parameters of the motion program for ``config``.

    The starting x position is always drawn first so that sequences of
    different classes sharing a seed start from the same place.
    """
    rng = np.random.default_rng(config.seed)
    body = _body_for(config)
    n = config.n_frames
    lo = body.reach + 1.0
    hi = config.width - lo
    if hi <= lo:
        lo = hi = config.width / 2
    params = {"x0": float(rng.uniform(lo, hi)), "facing": 1 if rng.random() < 0.5 else -1}
    time_scale = 24.0 / config.fps
    activity = config.activity
    if activity == ActivityClass.WALK:
        margin = 0.32 * body.height + 1.0
        params.update(
            speed=float(rng.uniform(1.0, 1.6) * config.width / 160.0 * time_scale),
            stride_period=float(rng.uniform(12.0, 18.0) / time_scale),
            phase=float(rng.uniform(0.0, 2 * math.pi)),
            lo=margin,
            hi=config.width - margin,
        )
    elif activity == ActivityClass.SIT:
        shift = int(rng.integers(-2, 3))
        start = min(max(round(n / 3) + shift, 0), n - 2)
        end = min(max(round(2 * n / 3) + shift, start + 1), n - 1)
        params.update(start=start, end=end)
    elif activity in (ActivityClass.LIFT, ActivityClass.PUT_DOWN):
        onset_hi = max(3, n // 6)
        onset = min(int(rng.integers(2, onset_hi + 1)), n - 2)
        end = max(n - 1 - int(rng.integers(0, 4)), onset + 1)
        params.update(onset=onset, end=min(end, n - 1))
    return params


def walk_position(t: float, x0: float, speed: float, direction: int, lo: float, hi: float):
    """Centre x and heading of a walker bouncing between ``lo`` and ``hi``."""
    span = hi - lo
    if span <= 0:
        return lo, direction
    u = (x0 - lo + direction * speed * t) % (2 * span)
    if u <= span:
        return lo + u, direction
    return lo + 2 * span - u, -direction


def _ramp(t, start, end):
    if end <= start:
        return 1.0 if t >= end else 0.0
    return min(max((t - start) / (end - start), 0.0), 1.0)


def pose_at(config: SceneConfig, t: int, params: dict | None = None) -> Pose:
    """Pose of the actor at frame ``t``."""
    params = motion_parameters(config) if params is None else params
    activity = config.activity
    x0, facing = params["x0"], params["facing"]
    if activity == ActivityClass.WALK:
        x, heading = walk_position(t, x0, params["speed"], facing, params["lo"], params["hi"])
        swing = math.radians(28.0) * math.sin(2 * math.pi * t / params["stride_period"] + params["phase"])
        arm = -0.6 * swing
        return Pose(
            x=x,
            facing=heading,
            leg_angles=(swing, -swing),
            arm_angles=(arm, arm),
        )
    if activity == ActivityClass.SIT:
        body = _body_for(config)
        frac = _ramp(t, params["start"], params["end"])
        return Pose(x=x0, facing=facing, drop=frac * body.max_drop, planted_feet=True)
    if activity in (ActivityClass.LIFT, ActivityClass.PUT_DOWN):
        # put-down plays the lift program backwards
        tt = t if activity == ActivityClass.LIFT else config.n_frames - 1 - t
        frac = _ramp(tt, params["onset"], params["end"])
        return Pose(x=x0, facing=facing, arm_angles=(0.08, 0.08 + frac * (math.pi / 2 - 0.08)), carrying=True)
    return Pose(x=x0, facing=facing)


# ---------------------------------------------------------------- rendering


class _Canvas:
    def __init__(self, width: int, height: int):
        yy, xx = np.mgrid[0:height, 0:width]
        self.xx = xx + 0.5
        self.yy = yy + 0.5

    def disc(self, cx, cy, r):
        return (self.xx - cx) ** 2 + (self.yy - cy) ** 2 <= r * r

    def rect(self, x0, y0, x1, y1):
        return (self.xx >= x0) & (self.xx < x1) & (self.yy >= y0) & (self.yy < y1)

    def segment(self, ax, ay, bx, by, thickness):
        dx, dy = bx - ax, by - ay
        length2 = dx * dx + dy * dy
        if length2 == 0:
            return self.disc(ax, ay, thickness / 2)
        s = ((self.xx - ax) * dx + (self.yy - ay) * dy) / length2
        np.clip(s, 0.0, 1.0, out=s)
        px = ax + s * dx - self.xx
        py = ay + s * dy - self.yy
        return px * px + py * py <= (thickness / 2) ** 2


def _actor_parts(canvas: _Canvas, body: _Body, pose: Pose):
    """Yield ``(mask, level)`` in back-to-front draw order."""
    x, f = pose.x, pose.facing
    top = body.ground - body.height + pose.drop
    head_cy = top + body.head_r
    torso_top = top + 2 * body.head_r
    hip_y = torso_top + body.torso_h
    shoulder_y = torso_top + 0.04 * body.height

    for side, angle in zip((-1, 1), pose.leg_angles):
        hx = x + side * 0.06 * body.height
        if pose.planted_feet:
            drop_ratio = min(max((body.ground - hip_y) / body.leg_len, -1.0), 1.0)
            angle = math.acos(drop_ratio)
        fx = hx + f * body.leg_len * math.sin(angle)
        fy = hip_y + body.leg_len * math.cos(angle)
        yield canvas.segment(hx, hip_y, fx, fy, body.leg_w), LEG_LEVEL

    yield canvas.rect(x - body.torso_w / 2, torso_top, x + body.torso_w / 2, hip_y), TORSO_LEVEL

    hand = None
    for side, angle in zip((-1, 1), pose.arm_angles):
        # arm index 1 is the front arm, on the side the actor faces
        sx = x + side * f * body.torso_w / 2
        hx = sx + side * f * body.arm_len * math.sin(angle)
        hy = shoulder_y + body.arm_len * math.cos(angle)
        yield canvas.segment(sx, shoulder_y, hx, hy, body.arm_w), ARM_LEVEL
        hand = (hx, hy)

    yield canvas.disc(x, head_cy, body.head_r), HEAD_LEVEL

    if pose.carrying:
        half = body.object_side / 2
        hx, hy = hand
        yield canvas.rect(hx - half, hy, hx + half, hy + 2 * half), OBJECT_LEVEL


def render_pose(config: SceneConfig, pose: Pose, canvas: _Canvas | None = None):
    """Render one frame; returns ``(frame uint8 (h, w), actor mask bool (h, w))``."""
    canvas = canvas or _Canvas(config.width, config.height)
    body = _body_for(config)
    frame = np.full((config.height, config.width), config.background_level, dtype=np.uint8)
    actor = np.zeros(frame.shape, dtype=bool)
    for mask, level in _actor_parts(canvas, body, pose):
        frame[mask] = level
        actor |= mask
    return frame, actor


def tight_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise InvalidConfig("actor is entirely outside the frame")
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def _event_intervals(config: SceneConfig, params: dict) -> tuple[tuple[int, int], ...]:
    n = config.n_frames
    activity = config.activity
    if activity == ActivityClass.SIT:
        return ((params["start"], params["end"] + 1),)
    if activity == ActivityClass.LIFT:
        return ((params["onset"], params["end"] + 1),)
    if activity == ActivityClass.PUT_DOWN:
        return ((n - 1 - params["end"], n - params["onset"]),)
    return ((0, n),)


def synth_sequence(config: SceneConfig) -> tuple[FrameSequence, GroundTruth]:
    """Render the labeled scene described by ``config``.

    Output is a pure function of ``config``; the same config always yields
    byte-identical frames.
    """
    if not isinstance(config, SceneConfig):
        raise InvalidConfig("config must be a SceneConfig")
    params = motion_parameters(config)
    canvas = _Canvas(config.width, config.height)
    frames = np.empty((config.n_frames, config.height, config.width), dtype=np.uint8)
    track = []
    for t in range(config.n_frames):
        frame, actor = render_pose(config, pose_at(config, t, params), canvas)
        frames[t] = frame
        track.append(tight_box(actor))
    truth = GroundTruth(
        activity=config.activity,
        event_intervals=_event_intervals(config, params),
        actor_track=tuple(track),
    )
    return FrameSequence(frames), truth


# ---------------------------------------------------------------- noise


def add_noise(frames: FrameSequence, noise: NoiseConfig) -> FrameSequence:
    """Degrade ``frames``: illumination ramp, moving distractors, pixel noise.

    The ramp rises linearly from 0 at the left column to ``illum_gradient`` at
    the right column. Distractors are discs composited over the scene, then
    Gaussian noise is added and the result rounded and clamped to [0, 255].
    """
    if not isinstance(frames, FrameSequence):
        frames = FrameSequence(frames)
    if noise.is_identity:
        return FrameSequence(frames.frames.copy())

    n, h, w = frames.frames.shape
    rng = np.random.default_rng(noise.seed)
    out = frames.frames.astype(np.float64)
    if noise.illum_gradient:
        out += noise.illum_gradient * np.arange(w) / max(w - 1, 1)

    if noise.distractor_count:
        canvas = _Canvas(w, h)
        radius = max(2.0, 0.035 * h)
        for _ in range(noise.distractor_count):
            level = float(rng.integers(90, 231))
            x, y = rng.uniform(radius, w - radius), rng.uniform(radius, h - radius)
            theta = rng.uniform(0, 2 * math.pi)
            vx, vy = noise.distractor_speed * math.cos(theta), noise.distractor_speed * math.sin(theta)
            for t in range(n):
                out[t][canvas.disc(x, y, radius)] = level
                x, vx = _bounce(x + vx, vx, radius, w - radius)
                y, vy = _bounce(y + vy, vy, radius, h - radius)

    if noise.pixel_sigma:
        out += rng.normal(0.0, noise.pixel_sigma, size=out.shape)
    np.rint(out, out=out)
    np.clip(out, 0, 255, out=out)
    return FrameSequence(out.astype(np.uint8))


def _bounce(pos, vel, lo, hi):
    if pos < lo:
        return 2 * lo - pos, -vel
    if pos > hi:
        return 2 * hi - pos, -vel
    return pos, vel
