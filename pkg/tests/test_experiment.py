import csv
import io
import json

import numpy as np
import pytest

from dpnhar.dataset import load_manifest, synth_dataset
from dpnhar.exceptions import InsufficientData, InvalidConfig, SchemaVersionMismatch
from dpnhar.experiment import (
    FIGURE_FILES,
    ExperimentConfig,
    FeatureConfig,
    FeatureDataset,
    Metrics,
    default_profiles,
    emit_figure_data,
    evaluate,
    make_splits,
    run_noise_experiment,
    train_bank,
    with_overrides,
    write_experiment,
)
from dpnhar.features import RoiKind
from dpnhar.fusion import subsample_window
from dpnhar.hmm import HmmConfig
from dpnhar.persistence import bank_to_text
from dpnhar.scene import ActivityClass, NoiseConfig, SceneConfig

SMALL = dict(per_class_count=4, n_sets=2, scene=SceneConfig(n_frames=24))


@pytest.fixture(scope="module")
def small_config():
    return ExperimentConfig(**SMALL)


@pytest.fixture(scope="module")
def small_data(small_config):
    c = small_config
    return FeatureDataset.generate(c.per_class_count, c.scene, NoiseConfig(), c.master_seed, c.features)


@pytest.fixture(scope="module")
def small_plan(small_data, small_config):
    return make_splits(small_data, small_config.n_sets, small_config.split_seed)


def labels_for(per_class):
    return {f"{c.slug}_{i:03d}": int(c) for c in ActivityClass for i in range(per_class)}


class TestSplits:
    def test_one_class_ten_sets(self):
        labels = {f"walk_{i:03d}": 0 for i in range(10)}
        labels.update({f"{c.slug}_000": int(c) for c in list(ActivityClass)[1:]})
        labels.update({f"{c.slug}_001": int(c) for c in list(ActivityClass)[1:]})
        plan = make_splits(labels, 10, seed=3)
        walk_held = [sum(s.startswith("walk") for s in part.test_ids) for part in plan.sets]
        assert walk_held == [1] * 10

    def test_deterministic(self):
        assert make_splits(labels_for(6), 3, 9) == make_splits(labels_for(6), 3, 9)
        assert make_splits(labels_for(6), 3, 9) != make_splits(labels_for(6), 3, 10)

    def test_default_plan_soundness(self):
        labels = labels_for(30)
        plan = make_splits(labels, 10, 7)
        held = [s for part in plan.sets for s in part.test_ids]
        assert sorted(held) == sorted(labels)
        for part in plan.sets:
            assert not set(part.train_ids) & set(part.test_ids)
            assert set(part.train_ids) | set(part.test_ids) == set(labels)
            assert {labels[s] for s in part.train_ids} == set(range(5))

    def test_insufficient(self):
        labels = labels_for(2)
        del labels["sit_001"]
        with pytest.raises(InsufficientData):
            make_splits(labels, 2, 0)
        with pytest.raises(InsufficientData):
            make_splits(labels_for(3), 1, 0)


class TestTrainEvaluate:
    def test_bank_structure(self, small_data, small_plan):
        bank = train_bank(small_data, small_plan, 0, "dbn")
        assert len(bank.models) == 20 and bank.fingerprint == small_data.fingerprint
        for params in bank.models.values():
            params.validate(bank.var_floor)

    def test_single_state_hmm_means(self, small_data, small_plan):
        bank = train_bank(small_data, small_plan, 1, "hmm", HmmConfig(n_states=1))
        train = small_plan.sets[1].train_ids
        for c in ActivityClass:
            ids = [s for s in train if small_data.labels[s] == c]
            for roi in RoiKind:
                data = np.concatenate([subsample_window(small_data.features[s]).block(roi) for s in ids])
                np.testing.assert_allclose(bank.models[(c, roi)].mean[0], data.mean(axis=0), atol=1e-12)

    def test_retrain_byte_identical(self, small_data, small_plan):
        a = bank_to_text(train_bank(small_data, small_plan, 0, "hmm"))
        b = bank_to_text(train_bank(small_data, small_plan, 0, "hmm"))
        assert a == b

    def test_metrics_identities(self, small_data, small_plan):
        bank = train_bank(small_data, small_plan, 0, "dbn")
        held = evaluate(small_data, small_plan, 0, bank)
        seen = evaluate(small_data, small_plan, 0, bank, subset="train")
        assert seen.overall_accuracy >= held.overall_accuracy
        for m in (held, seen):
            assert m.overall_accuracy == pytest.approx(np.trace(m.confusion) / m.confusion.sum())
            rows = m.confusion.sum(axis=1)
            assert rows.sum() == m.n_test
            np.testing.assert_allclose(m.per_class_accuracy, np.diag(m.confusion) / rows)

    def test_empty_test_set(self):
        with pytest.raises(InsufficientData):
            Metrics.from_records([])


class TestConfig:
    def test_round_trip(self):
        config = ExperimentConfig(**SMALL)
        assert ExperimentConfig.from_dict(config.to_dict()).to_dict() == config.to_dict()

    def test_partial_profile_inherits(self):
        config = ExperimentConfig.from_dict({"profiles": {"noisy": {"pixel_sigma": 9}}})
        noisy = config.profiles["noisy"]
        assert noisy.pixel_sigma == 9 and noisy.distractor_count == default_profiles()["noisy"].distractor_count

    def test_full_resolution_flag(self):
        config = ExperimentConfig.from_dict({"paper_scale": True})
        assert (config.scene.width, config.scene.height) == (640, 480)

    @pytest.mark.parametrize("doc,exc", [
        ({"bogus": 1}, InvalidConfig),
        ({"format_version": 3}, SchemaVersionMismatch),
        ({"kinds": ["svm"]}, InvalidConfig),
        ({"scene": {"colour": 1}}, InvalidConfig),
        ({"noise_comparison": ["clean", "missing"]}, InvalidConfig),
    ])
    def test_rejects(self, doc, exc):
        with pytest.raises(exc):
            ExperimentConfig.from_dict(doc)

    def test_feature_config(self):
        assert FeatureConfig(threshold=20).fingerprint == "roi8/threshold=20/min_area=25"
        with pytest.raises(InvalidConfig):
            FeatureConfig(threshold=0)


@pytest.fixture(scope="module")
def results():
    profiles = {**default_profiles(), "noisy": NoiseConfig()}
    return run_noise_experiment(ExperimentConfig(**SMALL, profiles=profiles))


class TestNoiseExperiment:
    def test_identity_noise_no_degradation(self, results):
        for kind in ("dbn", "hmm"):
            a = results.run("clean", kind).metrics
            b = results.run("noisy", kind).metrics
            np.testing.assert_array_equal(a.confusion, b.confusion)
            assert results.mean_degradation(kind) == 0.0

    def test_figure_files(self, results, tmp_path):
        paths = emit_figure_data(results, tmp_path / "a")
        assert [p.name for p in paths] == list(FIGURE_FILES)
        emit_figure_data(results.to_dict(), tmp_path / "b")
        for name in FIGURE_FILES:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

        def rows(name):
            return list(csv.DictReader(io.StringIO((tmp_path / "a" / name).read_text())))

        for name in FIGURE_FILES[:2]:
            table = rows(name)
            assert [r["activity"] for r in table] == [c.slug for c in ActivityClass]
            for r in table:
                assert 0 <= float(r["clean_accuracy"]) <= 1 and 0 <= float(r["noisy_accuracy"]) <= 1
        traj = rows(FIGURE_FILES[2])
        assert traj and list(traj[0]) == ["sequence_id", "step", "p_walk", "p_sit", "p_lift", "p_putdown", "p_stand"]
        for r in traj:
            assert abs(sum(float(r[k]) for k in list(r)[2:]) - 1) <= 1e-9
        fig4 = rows(FIGURE_FILES[3])
        assert list(fig4[0]) == ["activity", "dbn_indoor", "dbn_outdoor", "hmm_indoor", "hmm_outdoor"]

    def test_output_tree(self, results, tmp_path):
        out = write_experiment(results, tmp_path / "run")
        names = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
        assert "results.json" in names and "splits.json" in names and "config.json" in names
        assert "decisions/clean_dbn.csv" in names and "figures/fig4_dbn_vs_hmm.csv" in names
        doc = json.loads((out / "results.json").read_text())
        assert set(doc["comparison"]) == {"dbn", "hmm"}
        reloaded = ExperimentConfig.from_dict(json.loads((out / "config.json").read_text()))
        assert reloaded.to_dict() == results.config.to_dict()


class TestManifestPipeline:
    def test_manifest_dataset_matches_generated(self, tmp_path):
        scene = SceneConfig(n_frames=8)
        manifest = synth_dataset(tmp_path, 2, scene, NoiseConfig(pixel_sigma=3, seed=1), master_seed=5)
        from_files = FeatureDataset.from_manifest(load_manifest(tmp_path / "manifest.json"))
        generated = FeatureDataset.generate(2, scene, NoiseConfig(pixel_sigma=3, seed=1), 5, FeatureConfig())
        assert from_files.labels == generated.labels == manifest.labels()
        for sid in generated.features:
            np.testing.assert_array_equal(from_files.features[sid].values, generated.features[sid].values)

    def test_manifest_missing_file(self, tmp_path):
        synth_dataset(tmp_path, 1, SceneConfig(n_frames=3), master_seed=1)
        next(tmp_path.glob("*.fgy")).unlink()
        with pytest.raises(OSError):
            load_manifest(tmp_path / "manifest.json")

    def test_override_helper(self):
        config = with_overrides(ExperimentConfig(), per_class_count=5)
        assert config.per_class_count == 5
        with pytest.raises(InvalidConfig):
            with_overrides(config, per_class_count=1)
