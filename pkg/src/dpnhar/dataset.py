"""On-disk datasets: FGY1 frame containers, ground-truth sidecars, manifests."""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .exceptions import InvalidConfig, IoError, SchemaVersionMismatch, ValidationError
from .scene import (
    ActivityClass,
    FrameSequence,
    GroundTruth,
    NoiseConfig,
    SceneConfig,
    add_noise,
    synth_sequence,
)

FGY_MAGIC = b"FGY1"
_FGY_HEADER = struct.Struct("<4sIII")
MANIFEST_VERSION = 1


# ---------------------------------------------------------------- FGY1 container


def encode_frames(seq: FrameSequence) -> bytes:
    header = _FGY_HEADER.pack(FGY_MAGIC, seq.width, seq.height, seq.n_frames)
    return header + seq.frames.tobytes()


def decode_frames(data: bytes) -> FrameSequence:
    if len(data) < _FGY_HEADER.size:
        raise ValidationError("truncated FGY1 header")
    magic, width, height, n_frames = _FGY_HEADER.unpack_from(data)
    if magic != FGY_MAGIC:
        raise ValidationError(f"bad magic {magic!r}, expected {FGY_MAGIC!r}")
    expected = _FGY_HEADER.size + width * height * n_frames
    if len(data) != expected:
        raise ValidationError(f"FGY1 payload is {len(data)} bytes, expected {expected}")
    pixels = np.frombuffer(data, dtype=np.uint8, offset=_FGY_HEADER.size)
    return FrameSequence(pixels.reshape(n_frames, height, width))


def write_frames(path, seq: FrameSequence) -> None:
    try:
        Path(path).write_bytes(encode_frames(seq))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_frames(path) -> FrameSequence:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return decode_frames(data)


# ---------------------------------------------------------------- ground truth


def truth_to_dict(truth: GroundTruth) -> dict:
    return {
        "class_id": int(truth.activity),
        "event_intervals": [list(iv) for iv in truth.event_intervals],
        "actor_track": [list(box) for box in truth.actor_track],
    }


def truth_from_dict(doc: dict) -> GroundTruth:
    return GroundTruth(
        activity=ActivityClass(doc["class_id"]),
        event_intervals=tuple(tuple(iv) for iv in doc["event_intervals"]),
        actor_track=tuple(tuple(box) for box in doc["actor_track"]),
    )


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def read_truth(path) -> GroundTruth:
    return truth_from_dict(_read_json(path))


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    sequence_id: str
    frames: str
    truth: str
    class_id: int
    n_frames: int
    seed: int
    noise_profile: str = "clean"

    @property
    def activity(self) -> ActivityClass:
        return ActivityClass(self.class_id)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path | None = None
    format_version: int = MANIFEST_VERSION

    def __post_init__(self):
        ids = [e.sequence_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("manifest sequence_ids are not unique")

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[ManifestEntry]:
        return iter(self.entries)

    def by_id(self) -> dict[str, ManifestEntry]:
        return {e.sequence_id: e for e in self.entries}

    def labels(self) -> dict[str, int]:
        return {e.sequence_id: e.class_id for e in self.entries}

    def resolve(self, relpath: str) -> Path:
        return (self.root or Path(".")) / relpath

    def load_frames(self, entry: ManifestEntry) -> FrameSequence:
        return read_frames(self.resolve(entry.frames))

    def load_truth(self, entry: ManifestEntry) -> GroundTruth:
        return read_truth(self.resolve(entry.truth))

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "entries": [asdict(e) for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def save_manifest(manifest: DatasetManifest, path) -> None:
    _write_text(Path(path), manifest.to_json())


def load_manifest(path, *, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    doc = _read_json(path)
    version = doc.get("format_version")
    if version != MANIFEST_VERSION:
        raise SchemaVersionMismatch(f"manifest format_version {version!r} != {MANIFEST_VERSION}")
    try:
        entries = [ManifestEntry(**e) for e in doc["entries"]]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed manifest entries: {exc}") from exc
    manifest = DatasetManifest(entries=entries, root=path.parent, format_version=version)
    if check_files:
        for e in entries:
            for rel in (e.frames, e.truth):
                if not manifest.resolve(rel).is_file():
                    raise IoError(f"manifest references missing file {rel}")
    return manifest


def manifest_digest(manifest: DatasetManifest) -> str:
    """SHA-256 over the manifest document and every referenced file, in entry order."""
    h = hashlib.sha256(manifest.to_json().encode())
    for e in manifest.entries:
        for rel in (e.frames, e.truth):
            try:
                h.update(manifest.resolve(rel).read_bytes())
            except OSError as exc:
                raise IoError(f"cannot read {rel}: {exc}") from exc
    return h.hexdigest()


# ---------------------------------------------------------------- generation


def derive_seed(*keys: int) -> int:
    """Stable 64-bit seed from integer keys, independent of generation order."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def sequence_id(activity: ActivityClass, index: int) -> str:
    return f"{activity.slug}_{index:03d}"


@dataclass(frozen=True)
class GeneratedSequence:
    entry: ManifestEntry
    frames: FrameSequence
    truth: GroundTruth


def generate_sequences(
    per_class_count: int,
    scene: SceneConfig | None = None,
    noise: NoiseConfig | None = None,
    master_seed: int = 0,
    profile_name: str = "clean",
) -> Iterator[GeneratedSequence]:
    """Yield ``per_class_count`` rendered sequences per class, class-major.

    Seeds depend only on ``(master_seed, class, index)``; noise seeds
    additionally mix in ``noise.seed``, so clean and noisy datasets built from
    one master seed share their underlying scenes.
    """
    if per_class_count < 1:
        raise InvalidConfig("per_class_count must be >= 1")
    scene = scene or SceneConfig()
    for activity in ActivityClass:
        for index in range(per_class_count):
            seed = derive_seed(master_seed, int(activity), index)
            frames, truth = synth_sequence(replace(scene, activity=activity, seed=seed))
            if noise is not None and not noise.is_identity:
                frames = add_noise(frames, replace(noise, seed=derive_seed(seed, noise.seed, 1)))
            sid = sequence_id(activity, index)
            entry = ManifestEntry(
                sequence_id=sid,
                frames=f"{sid}.fgy",
                truth=f"{sid}.truth.json",
                class_id=int(activity),
                n_frames=frames.n_frames,
                seed=seed,
                noise_profile=profile_name,
            )
            yield GeneratedSequence(entry, frames, truth)


def synth_dataset(
    root,
    per_class_count: int,
    scene: SceneConfig | None = None,
    noise: NoiseConfig | None = None,
    master_seed: int = 0,
    profile_name: str = "clean",
) -> DatasetManifest:
    """Write a labeled dataset plus ``manifest.json`` under ``root``."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {root}: {exc}") from exc
    entries = []
    for item in generate_sequences(per_class_count, scene, noise, master_seed, profile_name):
        write_frames(root / item.entry.frames, item.frames)
        _write_text(root / item.entry.truth, json.dumps(truth_to_dict(item.truth)) + "\n")
        entries.append(item.entry)
    manifest = DatasetManifest(entries=entries, root=root)
    save_manifest(manifest, root / "manifest.json")
    return manifest
