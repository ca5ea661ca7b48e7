"""Experiment orchestration: splits, bank training, evaluation, comparisons."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .dataset import DatasetManifest, generate_sequences
from .dbn import DbnConfig
from .exceptions import (
    FingerprintMismatch,
    InsufficientData,
    InvalidConfig,
    IoError,
    SchemaVersionMismatch,
    ValidationError,
)
from .features import (
    DEFAULT_MIN_AREA,
    DEFAULT_THRESHOLD,
    FeatureSequence,
    RoiKind,
    extract_sequence_features,
    feature_fingerprint,
)
from .fusion import Decision, FusionConfig, ModelBank, classify_sequence, fit_bank
from .hmm import HmmConfig
from .persistence import dumps_canonical
from .scene import N_CLASSES, ActivityClass, NoiseConfig, SceneConfig

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
CLASS_COLUMNS = ("p_walk", "p_sit", "p_lift", "p_putdown", "p_stand")


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class FeatureConfig:
    threshold: int = DEFAULT_THRESHOLD
    min_area: int = DEFAULT_MIN_AREA

    def __post_init__(self):
        if not 1 <= self.threshold <= 255 or self.min_area < 1:
            raise InvalidConfig("threshold must lie in [1, 255] and min_area be >= 1")

    @property
    def fingerprint(self) -> str:
        return feature_fingerprint(self.threshold, self.min_area)


def default_profiles() -> dict[str, NoiseConfig]:
    return {
        "clean": NoiseConfig(),
        "noisy": NoiseConfig(pixel_sigma=5.0, distractor_count=1, distractor_speed=1.5, seed=1),
        "indoor": NoiseConfig(pixel_sigma=2.0, seed=2),
        "outdoor": NoiseConfig(pixel_sigma=6.0, illum_gradient=40.0, seed=3),
    }


_SCENE_KEYS = ("width", "height", "fps", "n_frames", "actor_scale", "background_level")


@dataclass(frozen=True)
class ExperimentConfig:
    kinds: tuple[str, ...] = ("dbn", "hmm")
    scene: SceneConfig = field(default_factory=SceneConfig)
    per_class_count: int = 30
    master_seed: int = 2016
    n_sets: int = 10
    split_seed: int = 7
    prior: str = "uniform"
    features: FeatureConfig = field(default_factory=FeatureConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    dbn: DbnConfig = field(default_factory=DbnConfig)
    hmm: HmmConfig = field(default_factory=HmmConfig)
    profiles: Mapping[str, NoiseConfig] = field(default_factory=default_profiles)
    noise_comparison: tuple[str, str] = ("clean", "noisy")
    lighting_comparison: tuple[str, str] = ("indoor", "outdoor")

    def __post_init__(self):
        for kind in self.kinds:
            if kind not in ("dbn", "hmm"):
                raise InvalidConfig(f"unknown model kind {kind!r}")
        for name in (*self.noise_comparison, *self.lighting_comparison):
            if name not in self.profiles:
                raise InvalidConfig(f"comparison references unknown profile {name!r}")
        if self.per_class_count < 2:
            raise InvalidConfig("per_class_count must be >= 2")
        if self.prior not in ("uniform", "empirical"):
            raise InvalidConfig("prior must be 'uniform' or 'empirical'")

    def model_config(self, kind: str):
        return self.dbn if kind == "dbn" else self.hmm

    def to_dict(self) -> dict:
        return {
            "format_version": CONFIG_VERSION,
            "kinds": list(self.kinds),
            "scene": {k: getattr(self.scene, k) for k in _SCENE_KEYS},
            "per_class_count": self.per_class_count,
            "master_seed": self.master_seed,
            "n_sets": self.n_sets,
            "split_seed": self.split_seed,
            "prior": self.prior,
            "features": asdict(self.features),
            "fusion": asdict(self.fusion),
            "dbn": asdict(self.dbn),
            "hmm": asdict(self.hmm),
            "profiles": {name: asdict(p) for name, p in sorted(self.profiles.items())},
            "noise_comparison": list(self.noise_comparison),
            "lighting_comparison": list(self.lighting_comparison),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExperimentConfig":
        doc = dict(doc)
        version = doc.pop("format_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise SchemaVersionMismatch(f"config format_version {version!r} != {CONFIG_VERSION}")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known - {"paper_scale"}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kw: dict = {}
        try:
            scene_doc = dict(doc.get("scene", {}))
            if doc.get("paper_scale"):
                scene_doc.setdefault("width", 640)
                scene_doc.setdefault("height", 480)
            kw["scene"] = SceneConfig(**scene_doc)
            if "features" in doc:
                kw["features"] = FeatureConfig(**doc["features"])
            if "fusion" in doc:
                kw["fusion"] = FusionConfig(**doc["fusion"])
            if "dbn" in doc:
                kw["dbn"] = DbnConfig(**doc["dbn"])
            if "hmm" in doc:
                kw["hmm"] = HmmConfig(**doc["hmm"])
            if "profiles" in doc:
                # a partial profile inherits the remaining fields of the same-named default
                profiles = default_profiles()
                for name, p in doc["profiles"].items():
                    base = asdict(profiles[name]) if name in profiles else {}
                    profiles[name] = NoiseConfig(**{**base, **p})
                kw["profiles"] = profiles
            for key in ("kinds", "noise_comparison", "lighting_comparison"):
                if key in doc:
                    kw[key] = tuple(doc[key])
            for key in ("per_class_count", "master_seed", "n_sets", "split_seed", "prior"):
                if key in doc:
                    kw[key] = doc[key]
        except TypeError as exc:
            raise InvalidConfig(f"bad config section: {exc}") from exc
        return cls(**kw)


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------- data


@dataclass
class FeatureDataset:
    """Labels and extracted features keyed by sequence id."""

    labels: dict[str, int]
    features: dict[str, FeatureSequence]
    fingerprint: str

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, features: FeatureConfig | None = None) -> "FeatureDataset":
        features = features or FeatureConfig()
        feats = {}
        for entry in manifest:
            frames = manifest.load_frames(entry)
            feats[entry.sequence_id] = extract_sequence_features(frames, features.threshold, features.min_area)
        return cls(manifest.labels(), feats, features.fingerprint)

    @classmethod
    def generate(cls, per_class_count, scene, noise, master_seed, features: FeatureConfig,
                 profile_name: str = "clean") -> "FeatureDataset":
        labels, feats = {}, {}
        for item in generate_sequences(per_class_count, scene, noise, master_seed, profile_name):
            sid = item.entry.sequence_id
            labels[sid] = item.entry.class_id
            feats[sid] = extract_sequence_features(item.frames, features.threshold, features.min_area)
        return cls(labels, feats, features.fingerprint)


def _as_dataset(data, features: FeatureConfig | None) -> FeatureDataset:
    if isinstance(data, FeatureDataset):
        if features is not None and features.fingerprint != data.fingerprint:
            raise FingerprintMismatch("dataset was extracted with a different feature config")
        return data
    if isinstance(data, DatasetManifest):
        return FeatureDataset.from_manifest(data, features)
    raise ValidationError("expected a DatasetManifest or FeatureDataset")


def _labels_of(data) -> dict[str, int]:
    if isinstance(data, (DatasetManifest, FeatureDataset)):
        return data.labels() if isinstance(data, DatasetManifest) else dict(data.labels)
    return {str(k): int(v) for k, v in dict(data).items()}


# ---------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSet:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    n_sets: int
    seed: int
    sets: tuple[SplitSet, ...]

    def to_dict(self) -> dict:
        return {
            "n_sets": self.n_sets,
            "seed": self.seed,
            "sets": [{"train": list(s.train_ids), "test": list(s.test_ids)} for s in self.sets],
        }


def make_splits(data, n_sets: int = 10, seed: int = 0) -> SplitPlan:
    """Seeded round-robin hold-out folds.

    Each class's sequences are shuffled, then dealt to the folds as held-out
    items; the deal continues across classes so fold sizes stay balanced.
    """
    labels = _labels_of(data)
    if n_sets < 2:
        raise InsufficientData("need at least 2 split sets")
    by_class: dict[int, list[str]] = {}
    for sid in sorted(labels):
        by_class.setdefault(labels[sid], []).append(sid)
    for cls in range(N_CLASSES):
        if len(by_class.get(cls, ())) < 2:
            raise InsufficientData(f"class {ActivityClass(cls).slug} has fewer than 2 sequences")
    held: list[list[str]] = [[] for _ in range(n_sets)]
    counter = 0
    for cls in sorted(by_class):
        rng = np.random.default_rng([seed, cls])
        ids = by_class[cls]
        for i in rng.permutation(len(ids)):
            held[counter % n_sets].append(ids[i])
            counter += 1
    everything = sorted(labels)
    sets = []
    for test in held:
        test_set = set(test)
        sets.append(SplitSet(
            train_ids=tuple(s for s in everything if s not in test_set),
            test_ids=tuple(sorted(test)),
        ))
    return SplitPlan(n_sets=n_sets, seed=seed, sets=tuple(sets))


# ---------------------------------------------------------------- train / evaluate


def train_bank(
    data,
    plan: SplitPlan,
    set_index: int,
    kind: str = "dbn",
    model_config=None,
    features: FeatureConfig | None = None,
    fusion: FusionConfig | None = None,
    prior: str = "uniform",
) -> ModelBank:
    dataset = _as_dataset(data, features)
    ids = plan.sets[set_index].train_ids
    return fit_bank(
        [dataset.features[s] for s in ids],
        [dataset.labels[s] for s in ids],
        kind=kind,
        model_config=model_config,
        fusion=fusion,
        prior=prior,
        fingerprint=dataset.fingerprint,
    )


class EvalRecord(NamedTuple):
    sequence_id: str
    true_class: ActivityClass
    decision: Decision


@dataclass(frozen=True, eq=False)
class Metrics:
    per_class_accuracy: np.ndarray  # (5,), NaN where a class has no test rows
    overall_accuracy: float
    confusion: np.ndarray           # (5, 5) counts, rows = true class
    n_test: int
    tie_break_rate: float
    component_accuracy: Mapping[str, float] = field(default_factory=dict)
    records: tuple[EvalRecord, ...] = field(default=(), repr=False)

    @classmethod
    def from_records(cls, records: Sequence[EvalRecord]) -> "Metrics":
        if not records:
            raise InsufficientData("cannot compute metrics on an empty test set")
        records = tuple(sorted(records, key=lambda r: r.sequence_id))
        confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
        for r in records:
            confusion[int(r.true_class), int(r.decision.winner)] += 1
        rows = confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_class = np.where(rows > 0, np.diag(confusion) / rows, np.nan)
        component = {
            roi.slug: float(np.mean([r.decision.component_votes[roi] == r.true_class for r in records]))
            for roi in RoiKind
        }
        return cls(
            per_class_accuracy=per_class,
            overall_accuracy=float(np.trace(confusion) / confusion.sum()),
            confusion=confusion,
            n_test=len(records),
            tie_break_rate=float(np.mean([r.decision.tie_broken for r in records])),
            component_accuracy=component,
            records=records,
        )

    def to_dict(self) -> dict:
        return {
            "per_class_accuracy": {
                c.slug: (None if np.isnan(self.per_class_accuracy[c]) else float(self.per_class_accuracy[c]))
                for c in ActivityClass
            },
            "overall_accuracy": self.overall_accuracy,
            "confusion": self.confusion.tolist(),
            "n_test": self.n_test,
            "tie_break_rate": self.tie_break_rate,
            "component_accuracy": dict(self.component_accuracy),
        }


def classify_ids(dataset: FeatureDataset, ids, bank: ModelBank, fusion: FusionConfig | None = None,
                 prior=None) -> list[EvalRecord]:
    return [
        EvalRecord(sid, ActivityClass(dataset.labels[sid]), classify_sequence(bank, dataset.features[sid], prior, fusion))
        for sid in sorted(ids)
    ]


def evaluate(
    data,
    plan: SplitPlan,
    set_index: int,
    bank: ModelBank,
    fusion: FusionConfig | None = None,
    features: FeatureConfig | None = None,
    subset: str = "test",
) -> Metrics:
    """Classify the held-out (or training) sequences of one split set."""
    dataset = _as_dataset(data, features)
    if dataset.fingerprint != bank.fingerprint:
        raise FingerprintMismatch(f"bank expects {bank.fingerprint!r}, data is {dataset.fingerprint!r}")
    split = plan.sets[set_index]
    ids = {"test": split.test_ids, "train": split.train_ids}.get(subset)
    if ids is None:
        raise ValidationError("subset must be 'test' or 'train'")
    return Metrics.from_records(classify_ids(dataset, ids, bank, fusion))


# ---------------------------------------------------------------- CSV exports


def decisions_to_csv(records: Sequence[EvalRecord]) -> str:
    lines = ["sequence_id,true_class,winner,tie_broken,vote_face,vote_hand,vote_body,vote_leg"]
    for r in sorted(records, key=lambda r: r.sequence_id):
        d = r.decision
        votes = ",".join(d.component_votes[roi].slug for roi in RoiKind)
        lines.append(f"{r.sequence_id},{r.true_class.slug},{d.winner.slug},{int(d.tie_broken)},{votes}")
    return "\n".join(lines) + "\n"


def trajectories_to_csv(rows: Sequence[tuple[str, np.ndarray]]) -> str:
    lines = ["sequence_id,step," + ",".join(CLASS_COLUMNS)]
    for sid, traj in sorted(rows, key=lambda r: r[0]):
        for step, row in enumerate(np.asarray(traj)):
            lines.append(f"{sid},{step}," + ",".join(format(float(p), ".17g") for p in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- the comparison experiment


@dataclass
class RunResult:
    profile: str
    kind: str
    metrics: Metrics
    fold_accuracy: list[float]


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    plan: SplitPlan
    runs: dict[tuple[str, str], RunResult]

    def run(self, profile: str, kind: str) -> RunResult:
        return self.runs[(profile, kind)]

    def degradation(self, kind: str) -> dict[str, float]:
        """Per-class accuracy drop from the first to the second noise profile."""
        clean, noisy = self.config.noise_comparison
        a = self.run(clean, kind).metrics.per_class_accuracy
        b = self.run(noisy, kind).metrics.per_class_accuracy
        return {c.slug: float(a[c] - b[c]) for c in ActivityClass}

    def mean_degradation(self, kind: str) -> float:
        return float(np.mean(list(self.degradation(kind).values())))

    def trajectories(self, profile: str | None = None, kind: str = "dbn") -> list[tuple[str, np.ndarray]]:
        profile = profile or self.config.noise_comparison[0]
        return [(r.sequence_id, r.decision.trajectory) for r in self.run(profile, kind).metrics.records]

    def to_dict(self) -> dict:
        clean, noisy = self.config.noise_comparison
        indoor, outdoor = self.config.lighting_comparison
        runs = {}
        for (profile, kind), run in sorted(self.runs.items()):
            runs[f"{profile}/{kind}"] = {
                "profile": profile,
                "kind": kind,
                "fold_accuracy": run.fold_accuracy,
                **run.metrics.to_dict(),
            }
        comparison = {}
        for kind in self.config.kinds:
            comparison[kind] = {
                "noise": {
                    "profiles": [clean, noisy],
                    "clean": runs[f"{clean}/{kind}"]["per_class_accuracy"],
                    "noisy": runs[f"{noisy}/{kind}"]["per_class_accuracy"],
                    "degradation": self.degradation(kind),
                    "mean_degradation": self.mean_degradation(kind),
                },
                "lighting": {
                    "profiles": [indoor, outdoor],
                    "indoor": runs[f"{indoor}/{kind}"]["per_class_accuracy"],
                    "outdoor": runs[f"{outdoor}/{kind}"]["per_class_accuracy"],
                    "indoor_overall": runs[f"{indoor}/{kind}"]["overall_accuracy"],
                    "outdoor_overall": runs[f"{outdoor}/{kind}"]["overall_accuracy"],
                },
            }
        traj_kind = "dbn" if "dbn" in self.config.kinds else self.config.kinds[0]
        return {
            "format_version": CONFIG_VERSION,
            "runs": runs,
            "comparison": comparison,
            "trajectory": {
                "profile": clean,
                "kind": traj_kind,
                "rows": [
                    {"sequence_id": sid, "steps": np.asarray(t).tolist()}
                    for sid, t in sorted(self.trajectories(clean, traj_kind))
                ],
            },
        }


def run_profile(dataset: FeatureDataset, plan: SplitPlan, kind: str, config: ExperimentConfig,
                profile: str = "") -> RunResult:
    records: list[EvalRecord] = []
    fold_accuracy = []
    for k, split in enumerate(plan.sets):
        bank = train_bank(dataset, plan, k, kind, config.model_config(kind), None, config.fusion, config.prior)
        fold = classify_ids(dataset, split.test_ids, bank, config.fusion)
        fold_accuracy.append(float(np.mean([r.decision.winner == r.true_class for r in fold])))
        records.extend(fold)
        log.debug("%s/%s set %d accuracy %.3f", profile, kind, k, fold_accuracy[-1])
    metrics = Metrics.from_records(records)
    log.info("%s/%s pooled accuracy %.3f", profile, kind, metrics.overall_accuracy)
    return RunResult(profile, kind, metrics, fold_accuracy)


def run_noise_experiment(config: ExperimentConfig | None = None, profiles: Sequence[str] | None = None,
                         kinds: Sequence[str] | None = None) -> ExperimentResults:
    """Train and evaluate every model kind on every comparison profile.

    All profiles render the same scenes (one master seed), differing only in
    the noise applied, and share a single split plan.
    """
    config = config or ExperimentConfig()
    wanted = list(dict.fromkeys([*config.noise_comparison, *config.lighting_comparison]))
    profiles = list(profiles or wanted)
    kinds = list(kinds or config.kinds)

    cache: dict[NoiseConfig, FeatureDataset] = {}
    datasets = {}
    for name in profiles:
        noise = config.profiles[name]
        if noise not in cache:
            log.info("rendering profile %s", name)
            cache[noise] = FeatureDataset.generate(
                config.per_class_count, config.scene, noise, config.master_seed, config.features, name
            )
        datasets[name] = cache[noise]

    plan = make_splits(next(iter(datasets.values())), config.n_sets, config.split_seed)
    runs = {}
    for name in profiles:
        for kind in kinds:
            runs[(name, kind)] = run_profile(datasets[name], plan, kind, config, name)
    return ExperimentResults(config=config, plan=plan, runs=runs)


# ---------------------------------------------------------------- outputs


FIGURE_FILES = (
    "fig1_dbn_accuracy.csv",
    "fig2_hmm_accuracy.csv",
    "fig3_posterior_trajectory.csv",
    "fig4_dbn_vs_hmm.csv",
)


def _fmt(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def emit_figure_data(results, out_dir) -> list[Path]:
    """Write the four figure CSVs.

    ``results`` is an :class:`ExperimentResults` or its ``to_dict()`` form.

    - fig1/fig2: ``activity,clean_accuracy,noisy_accuracy,degradation`` for DBN / HMM
    - fig3: ``sequence_id,step,p_walk,p_sit,p_lift,p_putdown,p_stand``
    - fig4: ``activity,dbn_indoor,dbn_outdoor,hmm_indoor,hmm_outdoor``
    """
    doc = results.to_dict() if isinstance(results, ExperimentResults) else results
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    comparison = doc["comparison"]
    slugs = [c.slug for c in ActivityClass]

    def accuracy_table(kind):
        lines = ["activity,clean_accuracy,noisy_accuracy,degradation"]
        noise = comparison.get(kind, {}).get("noise")
        for s in slugs:
            if noise is None:
                lines.append(f"{s},,,")
            else:
                lines.append(f"{s},{_fmt(noise['clean'][s])},{_fmt(noise['noisy'][s])},{_fmt(noise['degradation'][s])}")
        return "\n".join(lines) + "\n"

    fig4 = ["activity,dbn_indoor,dbn_outdoor,hmm_indoor,hmm_outdoor"]
    for s in slugs:
        cells = []
        for kind in ("dbn", "hmm"):
            light = comparison.get(kind, {}).get("lighting")
            cells += ["", ""] if light is None else [_fmt(light["indoor"][s]), _fmt(light["outdoor"][s])]
        fig4.append(f"{s}," + ",".join(cells))

    rows = [(r["sequence_id"], np.asarray(r["steps"])) for r in doc["trajectory"]["rows"]]
    texts = {
        FIGURE_FILES[0]: accuracy_table("dbn"),
        FIGURE_FILES[1]: accuracy_table("hmm"),
        FIGURE_FILES[2]: trajectories_to_csv(rows),
        FIGURE_FILES[3]: "\n".join(fig4) + "\n",
    }
    paths = []
    for name, text in texts.items():
        path = out / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
        paths.append(path)
    return paths


def write_experiment(results: ExperimentResults, out_dir) -> Path:
    """Write config, splits, results, decision CSVs and figure data under ``out_dir``."""
    out = Path(out_dir)
    try:
        (out / "decisions").mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(dumps_canonical(results.config.to_dict()) + "\n", encoding="utf-8")
        (out / "splits.json").write_text(dumps_canonical(results.plan.to_dict()) + "\n", encoding="utf-8")
        (out / "results.json").write_text(dumps_canonical(results.to_dict()) + "\n", encoding="utf-8")
        for (profile, kind), run in sorted(results.runs.items()):
            (out / "decisions" / f"{profile}_{kind}.csv").write_text(
                decisions_to_csv(run.metrics.records), encoding="utf-8"
            )
    except OSError as exc:
        raise IoError(f"cannot write experiment outputs to {out}: {exc}") from exc
    emit_figure_data(results, out / "figures")
    return out


def with_overrides(config: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(config, **changes)
