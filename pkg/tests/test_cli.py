"""Command-line tests: every subcommand end to end, exit-code contract,
strict config rejection, and the seed override environment variable."""

import json
import subprocess
import sys
import wave

import numpy as np
import pytest

from voxstyle.cli import build_train_config, main
from voxstyle.cli import ConfigError
from voxstyle.tensorio import read_feature_file, save_checkpoint

SR = 22050

TINY_CONFIG = {
    "steps": 3,
    "batch_size": 2,
    "seed": 5,
    "mode": "full",
    "model": {
        "n_symbols": 10,
        "decoder_blocks": 1,
        "head_hidden": 16,
        "encoder": {
            "dim": 32,
            "mel_bins": 80,
            "conv_blocks": 1,
            "uf_blocks": 1,
            "attention_heads": 1,
            "rvq_depth": 2,
            "codebook_size": 16,
        },
    },
    "data": {"n_styles": 2, "n_contents": 3, "frames_min": 30, "frames_max": 45, "seed": 3},
}


def write_tone(path, seconds=0.3, freq=220.0):
    t = np.arange(int(seconds * SR)) / SR
    pcm = (0.5 * np.sin(2 * np.pi * freq * t) * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(SR)
        fh.writeframes(pcm.tobytes())


def write_config(path, **overrides):
    data = {**TINY_CONFIG, **overrides}
    path.write_text(json.dumps(data))
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    code = main(["train", "--config", str(cfg), "--out", str(root / "out")])
    assert code == 0
    return root / "out"


class TestFeaturize:
    def test_writes_feature_set(self, tmp_path):
        wav = tmp_path / "tone.wav"
        write_tone(wav)
        out = tmp_path / "feats"
        assert main(["featurize", "--wav", str(wav), "--out", str(out)]) == 0
        mel = read_feature_file(out / "mel.sftr")
        lowband = read_feature_file(out / "lowband.sftr")
        f0 = read_feature_file(out / "f0.sftr")
        vuv = read_feature_file(out / "vuv.sftr")
        assert mel.shape[1] == 80 and lowband.shape[1] == 20
        assert f0.shape == (mel.shape[0], 1) and vuv.shape == (mel.shape[0], 1)
        np.testing.assert_array_equal(mel[:, :20], lowband)
        assert set(np.unique(vuv)) <= {0.0, 1.0}
        sidecar = json.loads((out / "features.json").read_text())
        assert sidecar["frames"] == mel.shape[0]
        assert sidecar["sample_rate"] == SR
        assert sidecar["files"]["mel"] == "mel.sftr"

    def test_rerun_is_byte_identical(self, tmp_path):
        wav = tmp_path / "tone.wav"
        write_tone(wav)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["featurize", "--wav", str(wav), "--out", str(a)]) == 0
        assert main(["featurize", "--wav", str(wav), "--out", str(b)]) == 0
        for name in ("mel.sftr", "lowband.sftr", "f0.sftr", "vuv.sftr", "features.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_missing_wav_exits_2(self, tmp_path, capsys):
        code = main(["featurize", "--wav", str(tmp_path / "no.wav"), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_non_pcm16_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"this is not audio")
        assert main(["featurize", "--wav", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "error:" in capsys.readouterr().err


class TestGradcheck:
    def test_clean_suite_exits_0(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        lines = [ln for ln in out.splitlines() if "max_rel_err" in ln]
        assert len(lines) >= 20
        assert all("ok" in ln for ln in lines)
        assert "sd_content_grad_zero" in out
        assert "FAIL" not in out

    def test_corrupted_backward_exits_1(self, capsys):
        assert main(["gradcheck", "--corrupt"]) == 1
        captured = capsys.readouterr()
        assert "corrupt_canary" in captured.out
        assert "FAIL" in captured.out
        assert "failed" in captured.err

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "voxstyle.cli", "gradcheck", "--seed", "1"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr


class TestTrain:
    def test_artifacts_written(self, trained_run):
        losses = [json.loads(ln) for ln in (trained_run / "losses.ndjson").read_text().splitlines()]
        assert [row["step"] for row in losses] == [1, 2, 3]
        for row in losses:
            assert set(row) == {"step", "recon", "rvq", "adv", "sd", "sp", "total"}
        report = json.loads((trained_run / "report.json").read_text())
        assert report["mode"] == "full" and report["seed"] == 5 and report["steps"] == 3
        assert "recon_l1" in report["eval"] and "utilization" in report["eval"]
        assert (trained_run / "model" / "manifest.json").exists()
        assert (trained_run / "model" / "tensors.bin").exists()
        assert (trained_run / "data" / "index.json").exists()

    def test_unknown_key_names_path(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        data = json.loads(json.dumps(TINY_CONFIG))
        data["optimizer"] = {"lr": 0.001, "momentum": 0.9}
        cfg.write_text(json.dumps(data))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "unknown config key: optimizer.momentum" in capsys.readouterr().err

    def test_unknown_nested_encoder_key_named(self, tmp_path, capsys):
        data = json.loads(json.dumps(TINY_CONFIG))
        data["model"]["encoder"]["dropout"] = 0.1
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(data))
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "model.encoder.dropout" in capsys.readouterr().err

    def test_invalid_json_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text("{steps: 3")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "JSON" in capsys.readouterr().err

    def test_unknown_mode_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", mode="backwards")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "mode" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "no.json")]) == 2

    def test_seed_env_override(self, tmp_path, monkeypatch):
        cfg = write_config(tmp_path / "c.json")
        monkeypatch.setenv("SPOTLIGHT_SEED", "123")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["seed"] == 123

    def test_bad_seed_env_exits_2(self, tmp_path, monkeypatch, capsys):
        cfg = write_config(tmp_path / "c.json")
        monkeypatch.setenv("SPOTLIGHT_SEED", "lucky")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "SPOTLIGHT_SEED" in capsys.readouterr().err

    def test_same_seed_reruns_identically(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a" / "losses.ndjson").read_bytes() == (
            tmp_path / "b" / "losses.ndjson"
        ).read_bytes()
        assert (tmp_path / "a" / "model" / "tensors.bin").read_bytes() == (
            tmp_path / "b" / "model" / "tensors.bin"
        ).read_bytes()


class TestEval:
    def test_checkpoint_eval(self, trained_run, capsys):
        code = main(["eval", "--model", str(trained_run / "model"), "--data", str(trained_run / "data")])
        assert code == 0
        metrics = json.loads(capsys.readouterr().out)
        for key in ("recon_l1", "vuv_f1", "rmse_f0_proxy", "orthogonality", "utilization", "quant_err"):
            assert key in metrics
        assert len(metrics["utilization"]) == 2

    def test_all_samples_flag(self, trained_run, capsys):
        code = main([
            "eval", "--model", str(trained_run / "model"),
            "--data", str(trained_run / "data"), "--all-samples",
        ])
        assert code == 0
        json.loads(capsys.readouterr().out)

    def test_oracle_checkpoint(self, trained_run, tmp_path, capsys):
        save_checkpoint(tmp_path / "oracle", {"model_type": "oracle"}, {})
        code = main(["eval", "--model", str(tmp_path / "oracle"), "--data", str(trained_run / "data")])
        assert code == 0
        metrics = json.loads(capsys.readouterr().out)
        assert metrics["recon_l1"] == 0.0
        assert metrics["vuv_f1"] == metrics["oracle_vuv_f1"]

    def test_missing_data_exits_2(self, trained_run, tmp_path):
        assert main(["eval", "--model", str(trained_run / "model"), "--data", str(tmp_path / "no")]) == 2


class TestBuildConfig:
    def test_defaults_from_empty_object(self):
        config = build_train_config({})
        assert config.steps == 500 and config.seed == 7 and config.mode == "full"

    def test_lists_become_tuples(self):
        config = build_train_config({"data": {"n_styles": 2, "f0_bases": [100.0, 200.0]}})
        assert config.data.f0_bases == (100.0, 200.0)

    def test_root_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key: epochs"):
            build_train_config({"epochs": 10})

    def test_non_object_section(self):
        with pytest.raises(ConfigError, match="optimizer"):
            build_train_config({"optimizer": 3})


class TestAblate:
    def test_one_step_matrix(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("SPOTLIGHT_SEED", "7")
        out = tmp_path / "ablation.json"
        code = main(["ablate", "--steps", "1", "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert report["seed"] == 7 and report["steps"] == 1
        modes = [row["mode"] for row in report["modes"]]
        assert modes == [
            "full", "no_rt", "no_rt_uf", "no_rt_uf_ve",
            "no_sp", "no_sp_sd", "bm_attention", "plain_attention",
        ]
        for row in report["modes"]:
            assert np.isfinite(row["final_losses"]["total"])
            assert "quant_err" in row["eval"]
        table = capsys.readouterr().out
        for col in ("mode", "recon_l1", "ortho", "quant", "util"):
            assert col in table
