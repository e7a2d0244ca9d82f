import json
import re
from pathlib import Path

import pytest
import yaml

from ctsr.cli import run
from ctsr.config import ConfigError, load_config, parse_config

FAST_CONFIG = {
    "seed": 42,
    "output_dir": "run1",
    "phantom": {"dims": [16, 64, 64], "n_defects": 4, "diameter_range_vox": [2.0, 8.0]},
    "degradation": {"blur_sigma_vox": 0.4, "bin_factor": 4, "noise_sigma": 0.005, "bias_amplitude": 0.03},
    "dataset": {"n_train_parts": 1, "n_test_parts": 1, "hr_patch": 32, "stride": 16},
    "network": {"family": "srcnn", "dimensionality": "2.5d"},
    "training": {"batch_size": 4, "steps": 25, "learning_rate": 0.001,
                 "checkpoint_every": 10, "validation_fraction": 0.1},
    "tiles": {"tile_yx": [64, 64], "overlap_yx": [10, 10]},
}


@pytest.fixture()
def config_path(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(FAST_CONFIG))
    return path


class TestConfig:
    def test_unknown_top_level_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config({"seeed": 1})

    def test_unknown_section_key_names_path(self):
        with pytest.raises(ConfigError, match=r"training\.lr: unknown key"):
            parse_config({"training": {"lr": 0.1}})

    def test_invalid_value_names_section(self):
        with pytest.raises(ConfigError, match="network"):
            parse_config({"network": {"family": "unet", "dimensionality": "2d"}})

    def test_master_seed_derives_sub_seeds(self):
        a = parse_config({"seed": 1})
        b = parse_config({"seed": 1})
        c = parse_config({"seed": 2})
        assert a.training.seed == b.training.seed
        assert a.degradation.seed == b.degradation.seed
        assert a.training.seed != c.training.seed

    def test_explicit_seed_wins(self):
        cfg = parse_config({"training": {"seed": 77}})
        assert cfg.training.seed == 77

    def test_seed_override(self, config_path):
        a = load_config(config_path)
        b = load_config(config_path, seed_override=7)
        assert a.seed == 42 and b.seed == 7
        assert a.training.seed != b.training.seed


class TestParamsCommand:
    def test_srcnn_25d_totals(self, capsys):
        assert run(["params", "--family", "srcnn", "--mode", "2.5d"]) == 0
        out = capsys.readouterr().out
        assert re.search(r"^total 88385$", out, re.M)
        assert re.search(r"^delta 31104", out, re.M)

    def test_edsr_3d_total(self, capsys):
        assert run(["params", "--family", "edsr", "--mode", "3d"]) == 0
        assert re.search(r"^total 3655169$", capsys.readouterr().out, re.M)

    def test_esrgan_flags_non_reproducible_totals(self, capsys):
        assert run(["params", "--family", "esrgan", "--mode", "2d"]) == 0
        out = capsys.readouterr().out
        assert re.search(r"^total 16695681$", out, re.M)
        assert "not reproducible" in out


class TestExitCodes:
    def test_malformed_config_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("training:\n  lr: 0.1\n")
        assert run(["dataset", "--config", str(bad), "--out", str(tmp_path / "ds")]) == 1
        assert "training.lr" in capsys.readouterr().err

    def test_missing_checkpoint_is_validation_error(self, config_path, tmp_path):
        assert run(["infer", "--config", str(config_path), "--checkpoint",
                    str(tmp_path / "nope.ckpt"), "--input", str(tmp_path / "v"),
                    "--out", str(tmp_path / "o")]) in (1, 2)

    def test_bad_subcommand_exits_nonzero(self):
        assert run(["frobnicate"]) == 1


class TestPipeline:
    def test_full_pipeline_and_infer_determinism(self, config_path, tmp_path):
        assert run(["dataset", "--config", str(config_path)]) == 0
        manifest = json.loads((tmp_path / "run1/dataset/manifest.json").read_text())
        assert len(manifest["entries"]) == 2

        assert run(["train", "--config", str(config_path)]) == 0
        ckpt = tmp_path / "run1/train_srcnn_2.5d/checkpoint_final.ckpt"
        assert ckpt.exists()
        assert (tmp_path / "run1/train_srcnn_2.5d/loss_history.csv").exists()

        assert run(["eval", "--config", str(config_path), "--checkpoint", str(ckpt)]) == 0
        eval_dir = tmp_path / "run1/eval_srcnn_2.5d"
        assert (eval_dir / "summary.json").exists()
        assert (eval_dir / "psnr.csv").exists()
        assert (eval_dir / "psnr.png").exists()
        assert (eval_dir / "detection.png").exists()

        assert run(["report", str(eval_dir), "--out", str(tmp_path / "report.csv")]) == 0
        assert (tmp_path / "report.csv").exists()

        # infer twice -> byte-identical volumes
        lr_file = tmp_path / "run1/dataset/part_001_lr.json"
        for out_name in ("sr_a", "sr_b"):
            assert run(["infer", "--config", str(config_path), "--checkpoint", str(ckpt),
                        "--input", str(lr_file), "--out", str(tmp_path / out_name),
                        "--z-factor", "4", "--xy-factor", "4"]) == 0
        a = (tmp_path / "sr_a.raw").read_bytes()
        b = (tmp_path / "sr_b.raw").read_bytes()
        assert a == b

        # run records carry config hash and versions
        record = json.loads((tmp_path / "run1/dataset/run_record.json").read_text())
        assert record["config_hash"]
        assert "torch" in record["versions"]

    def test_dataset_collision_exits_1(self, config_path, tmp_path, capsys):
        assert run(["dataset", "--config", str(config_path)]) == 0
        assert run(["dataset", "--config", str(config_path)]) == 1
        assert run(["dataset", "--config", str(config_path), "--overwrite"]) == 0

    def test_phantom_command(self, config_path, tmp_path):
        assert run(["phantom", "--config", str(config_path)]) == 0
        out = tmp_path / "run1/phantom"
        assert (out / "phantom_hr.raw").exists()
        assert (out / "phantom_defects.json").exists()

    def test_degrade_command(self, config_path, tmp_path):
        assert run(["phantom", "--config", str(config_path)]) == 0
        hr = tmp_path / "run1/phantom/phantom_hr.json"
        assert run(["degrade", "--config", str(config_path), "--input", str(hr),
                    "--out", str(tmp_path / "lr")]) == 0
        header = json.loads((tmp_path / "lr.json").read_text())
        assert header["dims_zyx"] == [4, 16, 16]
