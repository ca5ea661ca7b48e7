import json
import subprocess
import sys

import pytest

from dpnhar.cli import apply_overrides, main, parse_override
from dpnhar.exceptions import InvalidConfig

TINY = ["--set", "per_class_count=2", "--set", "scene.n_frames=12", "--set", "n_sets=2",
        "--set", "dbn.em_max_iter=5", "--set", "hmm.em_max_iter=5"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "ds"
    assert main(["synth", "--out", str(root), *TINY]) == 0
    return root


class TestOverrides:
    def test_parse(self):
        assert parse_override("scene.n_frames=24") == (["scene", "n_frames"], 24)
        assert parse_override("prior=empirical") == (["prior"], "empirical")
        assert parse_override("kinds=[\"hmm\"]") == (["kinds"], ["hmm"])
        with pytest.raises(InvalidConfig):
            parse_override("novalue")

    def test_apply_nested(self):
        doc = apply_overrides({"scene": {"width": 160}}, ["scene.height=96", "profiles.noisy.pixel_sigma=2"])
        assert doc == {"scene": {"width": 160, "height": 96}, "profiles": {"noisy": {"pixel_sigma": 2}}}

    def test_apply_into_scalar(self):
        with pytest.raises(InvalidConfig):
            apply_overrides({"prior": "uniform"}, ["prior.x=1"])


class TestVerbs:
    def test_synth_writes_manifest(self, dataset):
        doc = json.loads((dataset / "manifest.json").read_text())
        assert doc["format_version"] == 1 and len(doc["entries"]) == 10

    def test_extract(self, dataset, tmp_path):
        assert main(["extract", "--manifest", str(dataset / "manifest.json"), "--out", str(tmp_path), *TINY]) == 0
        index = (tmp_path / "index.csv").read_text().splitlines()
        assert index[0] == "sequence_id,class_id,n_steps,file" and len(index) == 11
        first = (tmp_path / "lift_000.features.csv").read_text().splitlines()
        assert first[0] == "step,roi,f0,f1,f2,f3,f4,f5,f6,f7" and len(first) == 1 + 4 * 11

    def test_train_eval(self, dataset, tmp_path):
        bank = tmp_path / "bank.json"
        manifest = str(dataset / "manifest.json")
        assert main(["train", "--manifest", manifest, "--out", str(bank), "--kind", "hmm", *TINY]) == 0
        assert json.loads(bank.read_text())["kind"] == "hmm"
        out = tmp_path / "eval"
        assert main(["eval", "--manifest", manifest, "--bank", str(bank), "--out", str(out), *TINY]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["n_test"] == 5
        assert (out / "decisions.csv").read_text().startswith(
            "sequence_id,true_class,winner,tie_broken,vote_face,vote_hand,vote_body,vote_leg\n")

    def test_eval_fingerprint_mismatch(self, dataset, tmp_path):
        bank = tmp_path / "bank.json"
        manifest = str(dataset / "manifest.json")
        assert main(["train", "--manifest", manifest, "--out", str(bank), *TINY]) == 0
        rc = main(["eval", "--manifest", manifest, "--bank", str(bank), "--out", str(tmp_path / "e"),
                   *TINY, "--set", "features.threshold=20"])
        assert rc == 1

    def test_experiment_and_figdata(self, tmp_path):
        out = tmp_path / "exp"
        assert main(["experiment", "--out", str(out), *TINY]) == 0
        assert main(["figdata", "--results", str(out / "results.json"), "--out", str(tmp_path / "figs")]) == 0
        for name in ("fig1_dbn_accuracy.csv", "fig2_hmm_accuracy.csv", "fig3_posterior_trajectory.csv",
                     "fig4_dbn_vs_hmm.csv"):
            assert (tmp_path / "figs" / name).read_bytes() == (out / "figures" / name).read_bytes()

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"format_version": 1, "per_class_count": 2, "scene": {"n_frames": 6}}))
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
        doc = json.loads((tmp_path / "d" / "manifest.json").read_text())
        assert all(e["n_frames"] == 6 for e in doc["entries"])


class TestExitCodes:
    def test_validation_error(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--set", "scene.width=8"]) == 1
        assert main(["synth", "--out", str(tmp_path), "--set", "unknown=1"]) == 1
        assert main(["synth", "--out", str(tmp_path), "--profile", "foggy"]) == 1

    def test_bad_config_json(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 1

    def test_io_error(self, tmp_path):
        assert main(["train", "--manifest", str(tmp_path / "missing.json"), "--out", str(tmp_path / "b")]) == 2
        assert main(["synth", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["synth", "--out", str(blocker / "sub"), *TINY]) == 2

    def test_corrupt_bank(self, dataset, tmp_path):
        bank = tmp_path / "bank.json"
        bank.write_text(json.dumps({"format_version": 1, "kind": "dbn", "models": []}))
        rc = main(["eval", "--manifest", str(dataset / "manifest.json"), "--bank", str(bank),
                   "--out", str(tmp_path / "e"), *TINY])
        assert rc == 1

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "dpnhar.cli", "synth", "--out", str(tmp_path),
                               "--set", "scene.height=3"], capture_output=True, text=True)
        assert proc.returncode == 1 and "error:" in proc.stderr
