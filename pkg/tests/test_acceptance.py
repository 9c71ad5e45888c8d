"""Acceptance criteria 1-10.

Every test records a verdict; the terminal summary prints one PASS, FAIL or
SKIP line per criterion. Criteria 7 and 8 share one training run of about
21 minutes and are marked ``slow``. Criterion 6 needs the DiLiGenT release:
point ``PHOTOSTEREO_DILIGENT`` at its ``pmsData`` directory.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from photostereo.baseline import DEFAULT_SHADOW_THRESHOLD, solve_map
from photostereo.cli import run
from photostereo.core import NormalMap
from photostereo.evaluate import angular_error, infer, score
from photostereo.io import read_dataset, write_dataset
from photostereo.nn import Network, NetworkConfig
from photostereo.nn.gradcheck import run_all, sepconv_dense_check
from photostereo.pipeline import AugmentConfig, TrainConfig, train
from photostereo.projection import decode_heatmaps, encode_heatmap, project_direction, unproject
from photostereo.render import SceneSpec, Specular, render_scene, sample_hemisphere_lights, smooth_albedo

from conftest import random_hemisphere

VERDICTS: dict[int, tuple[str, str]] = {}


def verdict(criterion: int, passed: bool, detail: str) -> None:
    VERDICTS[criterion] = ("PASS" if passed else "FAIL", detail)
    assert passed, detail


def test_1_geometry_round_trip():
    l = random_hemisphere(np.random.default_rng(0), 10_000, 80)
    inv = np.max(np.abs(unproject(project_direction(l, 48), 48) - l))
    dec, valid = decode_heatmaps(encode_heatmap(l, 48))
    mae = float(angular_error(dec, l).mean())
    verdict(1, inv < 1e-9 and valid.all() and mae < 0.2,
            f"unproject(project) max error {inv:.1e}, heat-map decode MAE {mae:.4f} deg")


def test_2_gradient_correctness():
    t = time.monotonic()
    results = run_all(0)
    elapsed = time.monotonic() - t
    failed = [r.name for r in results if not r.passed]
    verdict(2, not failed and elapsed < 60,
            f"{len(results) - len(failed)}/{len(results)} checks in {elapsed:.0f} s" + (f", failed {failed}" if failed else ""))


def test_3_scale_equivariance():
    net = Network(seed=0, dtype=np.float64)
    x = np.abs(np.random.default_rng(1).standard_normal((2, 5, 5, 48, 48, 1)))
    y = net.forward(x)
    worst = max(float(np.max(np.abs(net.forward(a * x) - a * y)) / np.max(np.abs(a * y)))
                for a in (0.1, 1.0, 10.0, 1000.0))
    verdict(3, worst < 1e-6, f"worst relative error {worst:.1e} over alpha in 0.1, 1, 10, 1000")


def test_4_separable_equals_dense():
    errors = [sepconv_dense_check(seed, shape).error
              for seed, shape in enumerate([(3, 3, 4, 4, 1), (5, 5, 6, 7, 2), (5, 5, 8, 8, 2)])]
    verdict(4, max(errors) < 1e-10, f"max abs difference {max(errors):.1e} up to shape (5, 5, 8, 8, 2)")


def test_5_baseline_exact_on_lambertian_sphere(lambertian_sphere):
    gt = lambertian_sphere.normals
    region = gt.mask & (gt.normals[..., 2] >= np.cos(np.radians(70)))
    mae = score(solve_map(lambertian_sphere), NormalMap(gt.normals, region)).mean
    verdict(5, mae < 0.1, f"MAE {mae:.4f} deg at shadow threshold {DEFAULT_SHADOW_THRESHOLD}")


DILIGENT_OBJECTS = {"ball": {}, "bear": {"drop_first": 20}, "buddha": {}, "cat": {}, "cow": {}, "goblet": {},
                    "harvest": {"flip_gt": True}, "pot1": {}, "pot2": {}, "reading": {}}


def test_6_baseline_on_diligent():
    root = os.environ.get("PHOTOSTEREO_DILIGENT")
    if not root or not Path(root).is_dir():
        VERDICTS[6] = ("SKIP", "PHOTOSTEREO_DILIGENT is not set to the pmsData directory")
        pytest.skip("DiLiGenT not available")
    errors = {}
    for name, fixes in DILIGENT_OBJECTS.items():
        s = read_dataset(Path(root) / f"{name}PNG", **fixes)
        errors[name] = score(solve_map(s), s.normals, name).mean
    avg = float(np.mean(list(errors.values())))
    verdict(6, abs(errors["ball"] - 4.10) <= 1.0 and abs(avg - 15.39) <= 1.0,
            f"Ball {errors['ball']:.2f} deg, average {avg:.2f} deg")


# -- toy training (criteria 7 and 8) ---------------------------------------------

TOY_BUDGET = 30 * 60
TOY_TRAIN_SECONDS = 20 * 60
TOY_NET = NetworkConfig(base_features=8, map_size=32)
TOY_TRAIN = TrainConfig(batch_size=32, patches_per_view=256, epochs=1000, log_every=100, val_every=100,
                        max_seconds=TOY_TRAIN_SECONDS, seed=0)
TEST_PIXELS = 400


def _toy_scene(seed):
    spec = SceneSpec("bumps", (128, 128), albedo=smooth_albedo((128, 128), seed), specular=Specular(0.5, 20),
                     seed=seed, bump_height=1.5)
    return render_scene(spec, sample_hemisphere_lights(64, 90, seed=seed))


@pytest.fixture(scope="module")
def toy_run():
    start = time.monotonic()
    data = [_toy_scene(seed) for seed in range(8)]
    net = Network(TOY_NET, seed=0)
    res = train(data, AugmentConfig(seed=0), TOY_TRAIN, net)
    net.load_params(res.best_params)
    # held-out test scenes, unseen by training and by checkpoint selection
    rng = np.random.default_rng(0)
    maes = {"k12": [], "k1": [], "base": [], "base0": []}
    for seed in (100, 101):
        s = _toy_scene(seed)
        pixels = np.argwhere(s.mask)
        pixels = pixels[rng.choice(len(pixels), TEST_PIXELS, replace=False)]
        p12 = infer(net, s, 12, pixels=pixels)
        p1 = infer(net, s, 1, pixels=pixels)
        region = p12.mask & p1.mask
        gt = NormalMap(s.normals.normals, s.normals.mask & region)
        maes["k12"].append(score(p12, gt).mean)
        maes["k1"].append(score(p1, gt).mean)
        maes["base"].append(score(solve_map(s), gt).mean)
        maes["base0"].append(score(solve_map(s, shadow_threshold=0.0), gt).mean)
    out = {k: float(np.mean(v)) for k, v in maes.items()}
    out.update(val=res.best_val_mae, steps=res.steps, elapsed=time.monotonic() - start)
    return out


@pytest.mark.slow
def test_7_toy_training(toy_run):
    r = toy_run
    best_base = min(r["base"], r["base0"])
    verdict(7, r["val"] < 10 and r["k12"] < best_base and r["elapsed"] < TOY_BUDGET,
            f"validation MAE {r['val']:.2f} deg after {r['steps']} steps; test MAE {r['k12']:.2f} deg vs baseline "
            f"{r['base']:.2f} deg (threshold {DEFAULT_SHADOW_THRESHOLD}) / {r['base0']:.2f} deg (threshold 0); "
            f"{r['elapsed'] / 60:.1f} min total")


@pytest.mark.slow
def test_8_rotation_averaging_helps(toy_run):
    r = toy_run
    verdict(8, r["k12"] <= r["k1"] + 0.05, f"K_test=12 {r['k12']:.3f} deg, K_test=1 {r['k1']:.3f} deg")


def test_9_parameter_budget():
    n = Network(seed=0).num_params
    verdict(9, 3e5 <= n <= 8e5, f"default network has {n:,} parameters")


def test_10_deterministic_training(tmp_path):
    for seed in range(2):
        spec = SceneSpec("bumps", (24, 24), albedo=0.7, specular=Specular(0.5, 20), seed=seed)
        write_dataset(render_scene(spec, sample_hemisphere_lights(30, 90, seed=seed)), tmp_path / f"d{seed}")
    flags = ["--set", "blocks=2", "--set", "base_features=4", "--set", "map_size=16", "--set", "batch_size=8",
             "--set", "patches_per_view=16", "--set", "max_steps=12", "--set", "log_every=4",
             "--set", "val_every=4", "--set", "min_lights=10", "--seed", "7", "--threads", "1", "--quiet"]
    files = []
    for i in range(2):
        ckpt, log = tmp_path / f"run{i}.ckpt", tmp_path / f"run{i}.csv"
        assert run(["train", "--data", str(tmp_path / "d0"), str(tmp_path / "d1"), *flags,
                    "--out", str(ckpt), "--log", str(log)]) == 0
        files.append((ckpt.read_bytes(), log.read_bytes()))
    same_ckpt, same_log = files[0][0] == files[1][0], files[0][1] == files[1][1]
    verdict(10, same_ckpt and same_log, f"checkpoints identical: {same_ckpt}, logs identical: {same_log}")
