"""Least-squares Lambertian solver."""

import numpy as np
import pytest

from photostereo.baseline import DegenerateGeometryError, light_matrix, solve_batch, solve_map, solve_pixel
from photostereo.core import RenderedSample
from photostereo.evaluate import angular_error
from photostereo.projection import rotate_direction
from photostereo.render import SceneSpec, Specular, render_scene, sample_hemisphere_lights

from conftest import random_hemisphere


def _inclination_mask(sample, max_deg):
    return sample.mask & (sample.normals.normals[..., 2] >= np.cos(np.radians(max_deg)))


class TestSolvePixel:
    def test_axes(self):
        n, albedo = solve_pixel(np.eye(3), np.ones(3) / np.sqrt(3))
        np.testing.assert_allclose(n, np.ones(3) / np.sqrt(3), atol=1e-15)
        assert albedo == pytest.approx(1.0)

    def test_zero_albedo_convention(self):
        n, albedo = solve_pixel(np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(n, [0.0, 0.0, 1.0])
        assert albedo == 0.0

    def test_flip_to_front(self):
        n, _ = solve_pixel(np.eye(3), [0.1, 0.2, -0.5])
        assert n[2] > 0

    def test_exact_on_unshadowed_data(self):
        rng = np.random.default_rng(0)
        L = random_hemisphere(rng, 20, 60)
        ints = rng.uniform(0.5, 2.0, 20)
        S = light_matrix(L, ints)
        for n in random_hemisphere(rng, 20, 30):
            obs = 0.6 * S @ n
            assert np.all(obs > 0)
            est, albedo = solve_pixel(S, obs)
            assert np.arccos(min(1.0, est @ n)) < 1e-6
            assert albedo == pytest.approx(0.6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        S = light_matrix(random_hemisphere(rng, 10), 1.0)
        obs = rng.uniform(0.1, 1.0, 10)
        n1, a1 = solve_pixel(S, obs)
        n2, a2 = solve_pixel(S, 3.5 * obs)
        np.testing.assert_allclose(n2, n1, atol=1e-14)
        assert a2 == pytest.approx(3.5 * a1)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(2)
        L = random_hemisphere(rng, 12)
        obs = rng.uniform(0.1, 1.0, 12)
        a = 1.1
        n1, _ = solve_pixel(light_matrix(L, 1.0), obs)
        n2, _ = solve_pixel(light_matrix(rotate_direction(L, a), 1.0), obs)
        np.testing.assert_allclose(n2, rotate_direction(n1, a), atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            solve_pixel(light_matrix([[0, 0, 1], [0, 0, 1], [0, 0, 1.0]], 1.0), [1.0, 1.0, 1.0])
        with pytest.raises(DegenerateGeometryError):
            solve_pixel(np.eye(3)[:2], [1.0, 1.0])

    def test_batch_matches_pixel(self):
        rng = np.random.default_rng(3)
        S = light_matrix(random_hemisphere(rng, 15), rng.uniform(0.5, 1.5, 15))
        obs = rng.uniform(0.0, 1.0, (6, 15))
        weights = (rng.uniform(size=(6, 15)) > 0.3).astype(float)
        n, albedo, valid = solve_batch(S, obs, weights)
        assert valid.all()
        for i in range(6):
            keep = weights[i] > 0
            ni, ai = solve_pixel(S[keep], obs[i, keep])
            np.testing.assert_allclose(n[i], ni, atol=1e-12)
            assert albedo[i] == pytest.approx(ai)


class TestSolveMap:
    def test_lambertian_sphere_exact(self, lambertian_sphere):
        pred = solve_map(lambertian_sphere, shadow_threshold=0.0)
        region = _inclination_mask(lambertian_sphere, 70)
        err = angular_error(pred.normals[region], lambertian_sphere.normals.normals[region])
        assert err.mean() < 0.1

    def test_specular_degrades(self, lambertian_sphere):
        spec = SceneSpec("sphere", (65, 65), specular=Specular(0.5, 20))
        shiny = render_scene(spec, sample_hemisphere_lights(96, 90, seed=0))
        region = _inclination_mask(shiny, 70)
        gt = shiny.normals.normals[region]
        e0 = angular_error(solve_map(lambertian_sphere, 0.0).normals[region], gt).mean()
        e1 = angular_error(solve_map(shiny, 0.0).normals[region], gt).mean()
        assert e1 > e0

    def test_shadowed_zeros_are_discarded(self, lambertian_sphere):
        # at threshold 0 only the clipped zero readings are dropped, which is exact
        pred = solve_map(lambertian_sphere, shadow_threshold=0.0)
        region = _inclination_mask(lambertian_sphere, 89)
        err = angular_error(pred.normals[region], lambertian_sphere.normals.normals[region])
        assert err.max() < 1e-5

    def test_threshold_helps_with_noise(self):
        spec = SceneSpec("sphere", (65, 65), noise_std=0.01, seed=1)
        s = render_scene(spec, sample_hemisphere_lights(96, 90, seed=0))
        region = _inclination_mask(s, 80)
        gt = s.normals.normals[region]
        e0 = angular_error(solve_map(s, 0.0).normals[region], gt).mean()
        e1 = angular_error(solve_map(s, 0.1).normals[region], gt).mean()
        assert e1 < e0

    def test_chunking_invariant(self, specular_bumps):
        a = solve_map(specular_bumps, chunk=4096)
        b = solve_map(specular_bumps, chunk=37)
        np.testing.assert_allclose(a.normals, b.normals, atol=1e-12)

    def test_fallback_when_few_survive(self):
        # one bright observation and many dark ones: fewer than 3 pass the threshold
        dirs = np.array([[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, 0.6, 0.8], [-0.6, 0.0, 0.8]])
        n = np.array([0.0, 0.0, 1.0])
        imgs = np.array([1.0, 0.01, 0.01, 0.01]).reshape(4, 1, 1)
        s = RenderedSample(imgs, dirs, np.ones(4), np.ones((1, 1), bool))
        out = solve_map(s, shadow_threshold=0.5)
        assert out.mask.all() and out.normals[0, 0] @ n > 0

    def test_rejects_bad_threshold(self, lambertian_sphere):
        with pytest.raises(ValueError):
            solve_map(lambertian_sphere, shadow_threshold=1.0)
