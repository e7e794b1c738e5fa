"""CLI wiring: subcommands, exit codes, output formats."""

import json

import numpy as np
import pytest

import lvtomo as lv
from lvtomo.cli import cli
from lvtomo.experiments import SCHEMA


def run_cli(*argv):
    return cli(list(argv))


class TestExitCodes:
    def test_no_command_shows_help(self, capsys):
        assert run_cli() == 1

    def test_unknown_command(self):
        assert run_cli("frobnicate") == 1

    def test_unknown_flag(self):
        assert run_cli("eval", "--wat") == 1

    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as ei:
            run_cli("--help")
        assert ei.value.code == 0

    def test_every_subcommand_has_help(self):
        for cmd in ["phantom", "layout", "project", "noise", "art", "train",
                    "transfer", "eval", "slices", "run"]:
            with pytest.raises(SystemExit) as ei:
                run_cli(cmd, "--help")
            assert ei.value.code == 0

    def test_train_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert run_cli("train", "--config", str(missing)) == 1
        assert str(missing) in capsys.readouterr().err

    def test_runtime_error_exit_2(self, tmp_path, capsys):
        a = tmp_path / "a.vxg"
        b = tmp_path / "b.vxg"
        lv.save_grid(lv.VoxelGrid((2, 2, 2), 1.0, (0, 0, 0),
                                  np.zeros((2, 2, 2), np.float32)), a)
        lv.save_grid(lv.VoxelGrid((2, 2, 2), 1.0, (0, 0, 0),
                                  np.ones((2, 2, 2), np.float32)), b)
        assert run_cli("eval", "--a", str(a), "--b", str(b)) == 2


class TestPipeline:
    def test_phantom_layout_project_eval(self, tmp_path, capsys):
        g = tmp_path / "g.vxg"
        assert run_cli("phantom", "--kind", "jet", "--dims", "8,16,8",
                       "--voxel-size", "0.5", "--out", str(g)) == 0
        lay = tmp_path / "l.json"
        assert run_cli("layout", "--grid", str(g), "--views", "3",
                       "--step", "120", "--rows", "8", "--cols", "24",
                       "--out", str(lay)) == 0
        imgdir = tmp_path / "imgs"
        assert run_cli("project", "--grid", str(g), "--layout", str(lay),
                       "--out", str(imgdir), "--pgm") == 0
        imgs = sorted(imgdir.glob("*.img"))
        assert len(imgs) == 3
        assert len(sorted(imgdir.glob("*.pgm"))) == 3

        capsys.readouterr()
        assert run_cli("eval", "--a", str(g), "--b", str(g)) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["cosine_similarity"] == pytest.approx(1.0, abs=1e-12)
        assert out["cosine_distance"] == pytest.approx(0.0, abs=1e-12)

    def test_noise_and_art(self, tmp_path):
        g = tmp_path / "g.vxg"
        run_cli("phantom", "--kind", "jet", "--dims", "6,12,6",
                "--voxel-size", "0.5", "--out", str(g))
        lay = tmp_path / "l.json"
        run_cli("layout", "--grid", str(g), "--views", "4", "--step", "90",
                "--rows", "8", "--cols", "24", "--out", str(lay))
        imgdir = tmp_path / "imgs"
        run_cli("project", "--grid", str(g), "--layout", str(lay),
                "--out", str(imgdir))
        noisy = tmp_path / "noisy"
        assert run_cli("noise", "--images", str(imgdir), "--fraction", "0.05",
                       "--seed", "3", "--out", str(noisy)) == 0
        assert len(sorted(noisy.glob("*.img"))) == 4
        recon = tmp_path / "recon.vxg"
        assert run_cli("art", "--images", str(imgdir), "--layout", str(lay),
                       "--grid-template", str(g), "--sweeps", "3",
                       "--out", str(recon)) == 0
        assert recon.exists()

    def test_slices(self, tmp_path):
        g = tmp_path / "g.vxg"
        run_cli("phantom", "--kind", "turbulent", "--dims", "8,16,8",
                "--voxel-size", "0.5", "--seed", "4", "--out", str(g))
        out = tmp_path / "slices"
        assert run_cli("slices", "--grid", str(g), "--axis", "y",
                       "--positions", "0,8,15", "--out", str(out)) == 0
        assert len(sorted(out.glob("*.pgm"))) == 3

    def test_run_and_transfer(self, tmp_path, capsys):
        doc = {
            "schema": SCHEMA,
            "master_seed": 5,
            "phantom": {"kind": "jet", "dims": [6, 12, 6], "voxel_size_mm": 0.5},
            "layout": {"n_views": 3, "view_angle_step_deg": 120.0,
                       "rows": 8, "cols": 24},
            "train": {"epochs": 2, "batch_samples": 2, "rays_per_sample": 50,
                      "log_batches_first_epochs": 0},
        }
        cfgp = tmp_path / "c.json"
        cfgp.write_text(json.dumps(doc))
        out1 = tmp_path / "run1"
        assert run_cli("run", "--config", str(cfgp), "--out", str(out1)) == 0
        enc = out1 / "train" / "encoder.wen"
        assert enc.exists()

        out2 = tmp_path / "run2"
        assert run_cli("transfer", "--config", str(cfgp), "--encoder", str(enc),
                       "--out", str(out2)) == 0
        assert (out2 / "transfer" / "recon.vxg").exists()
        assert (out2 / "transfer" / "metrics.csv").exists()

    def test_run_same_seed_reproducible(self, tmp_path, capsys):
        doc = {
            "schema": SCHEMA,
            "master_seed": 6,
            "phantom": {"kind": "jet", "dims": [6, 12, 6], "voxel_size_mm": 0.5},
            "layout": {"n_views": 3, "view_angle_step_deg": 120.0,
                       "rows": 8, "cols": 24},
            "art": {"relaxation": 0.5, "sweeps": 3},
        }
        cfgp = tmp_path / "c.json"
        cfgp.write_text(json.dumps(doc))
        assert run_cli("run", "--config", str(cfgp), "--out", str(tmp_path / "a")) == 0
        m1 = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert run_cli("run", "--config", str(cfgp), "--out", str(tmp_path / "b")) == 0
        m2 = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert m1["final_metrics"] == m2["final_metrics"]
        # identical artifact bytes as well
        c1 = {f["path"]: f["sha256"] for f in m1["files"]}
        c2 = {f["path"]: f["sha256"] for f in m2["files"]}
        assert c1 == c2
