import json
import math

import numpy as np
import pytest

from frikit.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, ConfigError, content_hash, load_config, main
from frikit.kernels import EMOMS
from frikit.signal_model import DiracStream, breakdown_psnr


def run(tmp_path, *args):
    return main(list(args) + ["--out", str(tmp_path)])


def result_files(path):
    return {p.relative_to(path): p.read_bytes() for p in sorted(path.rglob("*"))
            if p.is_file() and p.name != "timing.json"}


class TestConfig:
    def test_missing_seed(self, tmp_path, capsys):
        assert run(tmp_path, "breakdown-map") == EXIT_CONFIG
        assert "seed" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        assert run(tmp_path, "breakdown-map", "--seed", "0", "--set", "colour=red") == EXIT_CONFIG
        assert "colour" in capsys.readouterr().err

    def test_bad_value(self, tmp_path):
        assert run(tmp_path, "montecarlo", "--seed", "0", "--set", "J=many") == EXIT_CONFIG
        assert run(tmp_path, "montecarlo", "--seed", "0", "--set", "method=magic") == EXIT_CONFIG
        assert run(tmp_path, "montecarlo", "--seed", "0", "--set", "dt0=-1") == EXIT_CONFIG

    def test_bad_json_file(self, tmp_path):
        (tmp_path / "c.json").write_text("[1, 2]")
        assert main(["montecarlo", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_file_and_overrides(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"seed": 3, "psnr": [10, 20], "J": 7}))
        cfg = load_config(str(tmp_path / "c.json"), ["J=9", "dt0=0.01,0.1"])
        assert cfg.seed == 3 and cfg.psnr == [10.0, 20.0] and cfg.J == 9 and cfg.dt0 == [0.01, 0.1]

    def test_gamma_default_depends_on_mode(self):
        assert load_config(None, ["seed=0"]).loss_weight == 1.0
        assert load_config(None, ["seed=0", "kernel_mode=unknown"]).loss_weight == 100.0
        assert load_config(None, ["seed=0", "kernel_mode=unknown", "gamma=5"]).loss_weight == 5.0

    def test_learned_methods_need_real_kernel(self):
        with pytest.raises(ConfigError):
            load_config(None, ["seed=0", "method=unfolded", "kernel=espline"])

    def test_hash_is_order_free(self):
        assert content_hash({"a": 1, "b": 2}) == content_hash({"b": 2, "a": 1})


class TestBreakdownCommand:
    def test_matches_library(self, tmp_path):
        assert run(tmp_path, "breakdown-map", "--seed", "0", "--set", "dt0=0.01,0.05,0.1") == EXIT_OK
        rows = np.loadtxt(tmp_path / "breakdown.csv", delimiter=",", skiprows=1)
        assert (tmp_path / "breakdown.csv").read_text().startswith("dt0,dt0_over_T,psnr_db\n")
        expected = breakdown_psnr(20, EMOMS(20).lam, np.array([0.01, 0.05, 0.1]) * 21)
        assert np.allclose(rows[:, 2], expected, rtol=1e-12, atol=0)
        assert rows[0, 2] == pytest.approx(36.5596, abs=1e-4)


class TestSynthReconstruct:
    def test_noiseless_roundtrip(self, tmp_path):
        assert run(tmp_path, "synth", "--seed", "4", "--set", "psnr=inf") == EXIT_OK
        truth = DiracStream.from_csv(tmp_path / "stream.csv")
        assert run(tmp_path, "reconstruct", "--seed", "4", "--samples", str(tmp_path / "samples.csv")) == EXIT_OK
        est = DiracStream.from_csv(tmp_path / "reconstruction.csv")
        assert np.max(np.abs(est.locations - truth.locations)) < 1e-9
        assert np.allclose(est.amplitudes, truth.amplitudes, rtol=1e-8)

    def test_wrong_sample_count(self, tmp_path):
        (tmp_path / "s.csv").write_text("1.0\n2.0\n")
        assert run(tmp_path, "reconstruct", "--seed", "0", "--samples", str(tmp_path / "s.csv")) == EXIT_CONFIG

    def test_zero_samples_are_a_numerical_failure(self, tmp_path):
        (tmp_path / "s.csv").write_text("0.0\n" * 21)
        assert run(tmp_path, "reconstruct", "--seed", "0", "--samples", str(tmp_path / "s.csv")) == EXIT_NUMERIC


class TestMonteCarlo:
    def test_noiseless_cadzow(self, tmp_path):
        assert run(tmp_path, "montecarlo", "--seed", "0", "--set", "psnr=inf", "--set", "J=20",
                   "--set", "dt0=0.05") == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["cells"][0]["sd_mean"] < 1e-6 and summary["cells"][0]["misses"] == 0
        assert (tmp_path / "sd_mean.csv").read_text().startswith("psnr,0.05\n")

    def test_reruns_are_byte_identical(self, tmp_path):
        args = ["montecarlo", "--seed", "1", "--set", "psnr=10,20", "--set", "dt0=0.01,0.1", "--set", "J=30"]
        assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
        a, b = result_files(tmp_path / "a"), result_files(tmp_path / "b")
        assert a == b and len(a) == 3
        assert (tmp_path / "a" / "timing.json").exists()

    def test_seed_changes_results(self, tmp_path):
        base = ["montecarlo", "--set", "J=30", "--set", "psnr=10"]
        main(base + ["--seed", "1", "--out", str(tmp_path / "a")])
        main(base + ["--seed", "2", "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "sd_mean.csv").read_bytes() != (tmp_path / "b" / "sd_mean.csv").read_bytes()


TINY_ENCODER = ["--seed", "0", "--set", "method=friednet-encoder", "--set", "train_size=64", "--set", "direct_epochs=1",
                "--set", "J=5"]


class TestModelCache:
    def test_cache_reused(self, tmp_path):
        assert run(tmp_path, "montecarlo", *TINY_ENCODER) == EXIT_OK
        models = sorted((tmp_path / "models").iterdir())
        assert [p.suffix for p in models] == [".frik", ".json"]
        stamp = models[0].stat().st_mtime_ns
        first = (tmp_path / "sd_mean.csv").read_bytes()
        assert run(tmp_path, "montecarlo", *TINY_ENCODER) == EXIT_OK
        assert models[0].stat().st_mtime_ns == stamp
        assert (tmp_path / "sd_mean.csv").read_bytes() == first

    def test_metadata_mismatch_warns_and_retrains(self, tmp_path):
        assert run(tmp_path, "montecarlo", *TINY_ENCODER) == EXIT_OK
        meta = next((tmp_path / "models").glob("*.json"))
        meta.write_text(json.dumps({"method": "something else"}))
        with pytest.warns(UserWarning, match="retraining"):
            assert run(tmp_path, "montecarlo", *TINY_ENCODER) == EXIT_OK
        assert json.loads(meta.read_text())["method"] == "friednet-encoder"

    def test_corrupt_checkpoint_warns(self, tmp_path):
        assert run(tmp_path, "montecarlo", *TINY_ENCODER) == EXIT_OK
        ckpt = next((tmp_path / "models").glob("*.frik"))
        ckpt.write_bytes(ckpt.read_bytes()[:50])
        with pytest.warns(UserWarning):
            assert run(tmp_path, "montecarlo", *TINY_ENCODER) == EXIT_OK

    def test_train_command_reports_model(self, tmp_path):
        assert run(tmp_path, "train", "--seed", "0", "--set", "method=unfolded", "--set", "train_size=16",
                   "--set", "unfolded_epochs=1") == EXIT_OK
        info = json.loads((tmp_path / "train.json").read_text())
        assert len(info["models"]) == 1 and (tmp_path / "models" / f"{info['models'][0]['model']}.frik").exists()

    def test_nothing_to_train(self, tmp_path):
        assert run(tmp_path, "train", "--seed", "0") == EXIT_CONFIG


class TestRocCommand:
    def test_from_files(self, tmp_path):
        (tmp_path / "det.csv").write_text("time,probability\n1.0,0.9\n2.0,0.4\n")
        (tmp_path / "truth.txt").write_text("1.01\n")
        assert run(tmp_path, "eval-roc", "--seed", "0", "--detections", str(tmp_path / "det.csv"),
                   "--truth", str(tmp_path / "truth.txt"), "--bins", "600") == EXIT_OK
        info = json.loads((tmp_path / "roc.json").read_text())
        assert info["tpr_at_fpr_0.1"] == 1.0 and info["truth"] == 1
        rows = np.loadtxt(tmp_path / "roc.csv", delimiter=",", skiprows=1)
        assert rows.shape == (101, 3) and math.isclose(rows[0, 2], 1 / 599)

    def test_missing_file(self, tmp_path):
        assert run(tmp_path, "eval-roc", "--seed", "0", "--detections", str(tmp_path / "nope.csv")) == EXIT_CONFIG
