"""The photostereo command line, driven in-process."""

import numpy as np
import pytest

from photostereo.cli import build_configs, read_config, run, scene_from_config, UsageError
from photostereo.io import read_dataset, read_image, read_normal_map

TINY = ["--set", "blocks=2", "--set", "base_features=4", "--set", "map_size=16", "--set", "patch_size=5",
        "--set", "batch_size=4", "--set", "patches_per_view=8", "--set", "max_steps=6", "--set", "log_every=3",
        "--set", "val_every=3", "--set", "val_pixels=8", "--set", "min_lights=10"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "scene.txt").write_text("surface = bumps  # random Gaussian bumps\nresolution = 24x24\n"
                                    "albedo = smooth\nspecular_strength = 0.3\n")
    for seed in range(3):
        assert run(["render", "--spec", str(root / "scene.txt"), "--lights", "30", "--seed", str(seed),
                    "--out", str(root / f"d{seed}")]) == 0
    return root


@pytest.fixture(scope="module")
def checkpoint(workdir):
    ckpt = workdir / "net.ckpt"
    data = [str(workdir / f"d{i}") for i in range(3)]
    assert run(["train", "--data", *data, *TINY, "--seed", "1", "--out", str(ckpt), "--quiet"]) == 0
    return ckpt


class TestConfig:
    def test_read_config(self, tmp_path):
        (tmp_path / "c.txt").write_text("# comment\nlr = 0.01\n\nblocks=3 # trailing\n")
        assert read_config(tmp_path / "c.txt") == {"lr": "0.01", "blocks": "3"}

    def test_malformed_line(self, tmp_path):
        (tmp_path / "c.txt").write_text("just words\n")
        with pytest.raises(UsageError):
            read_config(tmp_path / "c.txt")

    def test_build_configs_routes_keys(self):
        ncfg, acfg, tcfg = build_configs({"blocks": "2", "rotations": "6", "batch_size": "16", "seed": "4",
                                          "max_steps": "None"})
        assert ncfg.blocks == 2 and acfg.rotations == 6 and tcfg.batch_size == 16
        assert acfg.seed == tcfg.seed == 4 and tcfg.max_steps is None

    @pytest.mark.parametrize("values", [{"nonsense": "1"}, {"blocks": "two"}, {"batch_size": "0"}])
    def test_build_configs_rejects(self, values):
        with pytest.raises(UsageError):
            build_configs(values)

    def test_scene_keys(self):
        spec = scene_from_config({"surface": "plane", "resolution": "4x6", "albedo": "0.5"}, seed=0)
        assert spec.surface == "plane" and spec.resolution == (4, 6) and spec.specular is None
        with pytest.raises(UsageError):
            scene_from_config({"colour": "red"}, seed=0)


class TestCommands:
    def test_render_output(self, workdir):
        s = read_dataset(workdir / "d0")
        assert s.num_lights == 30 and s.images.shape == (30, 24, 24) and s.normals is not None

    def test_render_deterministic(self, workdir, tmp_path):
        assert run(["render", "--spec", str(workdir / "scene.txt"), "--lights", "30", "--seed", "0",
                    "--out", str(tmp_path / "again")]) == 0
        for f in sorted((workdir / "d0").iterdir()):
            assert f.read_bytes() == (tmp_path / "again" / f.name).read_bytes()

    def test_train_writes_checkpoint_and_log(self, checkpoint):
        assert checkpoint.stat().st_size > 0
        lines = checkpoint.with_name(checkpoint.name + ".log.csv").read_text().splitlines()
        assert lines[0] == "step,samples_seen,learning_rate,loss,val_mae" and len(lines) >= 3

    def test_infer_and_eval(self, workdir, checkpoint, capsys):
        out = workdir / "pred.pfm"
        assert run(["infer", "--ckpt", str(checkpoint), "--data", str(workdir / "d0"), "--ktest", "2",
                    "--stride", "4", "--out", str(out)]) == 0
        assert "MAE" in capsys.readouterr().out
        pred = read_normal_map(out)
        assert pred.mask.any() and not pred.mask[1::4].any()
        report = workdir / "report.txt"
        assert run(["eval", "--pred", str(out), "--gt", str(workdir / "d0"), "--name", "Bumps", "--method", "Net",
                    "--report", str(report), "--error-image", str(workdir / "err.png")]) == 0
        assert report.read_text().split()[:3] == ["Method", "Bumps", "Average"]
        assert read_image(workdir / "err.png").shape == (24, 24)

    def test_eval_self_is_zero(self, workdir, capsys):
        gt = workdir / "d0" / "normal_gt.pfm"
        assert run(["eval", "--pred", str(gt), "--gt", str(gt), "--method", "GT"]) == 0
        assert capsys.readouterr().out.splitlines()[1].split() == ["GT", "0.00", "0.00"]

    def test_baseline(self, workdir, capsys):
        out = workdir / "base.pfm"
        assert run(["baseline", "--data", str(workdir / "d1"), "--threshold", "0.05", "--out", str(out)]) == 0
        assert "MAE" in capsys.readouterr().out
        np.testing.assert_array_equal(read_normal_map(out).mask, read_dataset(workdir / "d1").mask)

    def test_inspect(self, workdir):
        out = workdir / "map.png"
        assert run(["inspect", "--data", str(workdir / "d0"), "--pixel", "12,12", "--map-size", "16",
                    "--scale", "3", "--out", str(out)]) == 0
        img = read_image(out)
        assert img.shape == (48, 48) and img.max() == 1.0

    @pytest.mark.slow
    def test_gradcheck(self, capsys):
        assert run(["gradcheck"]) == 0
        assert "checks passed" in capsys.readouterr().out


class TestExitCodes:
    def test_unknown_command(self):
        with pytest.raises(SystemExit) as e:
            run(["fly"])
        assert e.value.code == 2

    def test_missing_flag(self):
        with pytest.raises(SystemExit) as e:
            run(["baseline", "--data", "x"])
        assert e.value.code == 2

    def test_bad_override(self, workdir, tmp_path):
        assert run(["train", "--data", str(workdir / "d0"), "--set", "blocks", "--out", str(tmp_path / "c")]) == 2

    def test_bad_pixel(self, workdir, tmp_path):
        assert run(["inspect", "--data", str(workdir / "d0"), "--pixel", "99,0", "--out", str(tmp_path / "m.png")]) == 2

    def test_missing_dataset_is_runtime_error(self, tmp_path, capsys):
        assert run(["baseline", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "b.pfm")]) == 1
        assert "DatasetError" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, workdir, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"\x00" * 10)
        assert run(["infer", "--ckpt", str(bad), "--data", str(workdir / "d0"), "--out", str(tmp_path / "p")]) == 1
