"""Dataset directories and float normal maps on disk."""

import logging

import cv2
import numpy as np
import pytest

from photostereo.core import NormalMap
from photostereo.io import (
    DatasetError,
    read_dataset,
    read_image,
    read_normal_map,
    write_dataset,
    write_normal_map,
)
from photostereo.render import SceneSpec, Specular, render_scene, sample_hemisphere_lights

from conftest import random_hemisphere


@pytest.fixture(scope="module")
def sample():
    spec = SceneSpec("bumps", (17, 23), albedo=0.6, specular=Specular(0.3, 10), seed=2)
    s = render_scene(spec, sample_hemisphere_lights(12, 80, seed=2, intensity=1.7))
    return s


@pytest.fixture
def dataset_dir(tmp_path, sample):
    write_dataset(sample, tmp_path / "obj")
    return tmp_path / "obj"


def _field(shape=(5, 7), seed=0):
    n = random_hemisphere(np.random.default_rng(seed), shape[0] * shape[1]).reshape(shape + (3,))
    return NormalMap(n.astype(np.float32).astype(np.float64), np.ones(shape, bool))


class TestNormalMapFile:
    def test_round_trip_bit_exact(self, tmp_path):
        nm = _field()
        write_normal_map(tmp_path / "n.pfm", nm)
        back = read_normal_map(tmp_path / "n.pfm")
        np.testing.assert_array_equal(back.normals, nm.normals)
        assert back.mask.all()

    def test_header_and_row_order(self, tmp_path):
        nm = _field((2, 3))
        write_normal_map(tmp_path / "n.pfm", nm)
        raw = (tmp_path / "n.pfm").read_bytes()
        assert raw.startswith(b"PF 3 2 -1.0\n")
        first = np.frombuffer(raw[len(b"PF 3 2 -1.0\n"):][:12], "<f4")
        np.testing.assert_array_equal(first, nm.normals[0, 0])

    def test_masked_pixels_are_zero_vectors(self, tmp_path):
        nm = _field()
        nm.mask[1, 2] = False
        write_normal_map(tmp_path / "n.pfm", nm)
        back = read_normal_map(tmp_path / "n.pfm")
        np.testing.assert_array_equal(back.mask, nm.mask)
        np.testing.assert_array_equal(back.normals[1, 2], 0.0)

    def test_truncated(self, tmp_path):
        write_normal_map(tmp_path / "n.pfm", _field())
        raw = (tmp_path / "n.pfm").read_bytes()
        (tmp_path / "n.pfm").write_bytes(raw[:-4])
        with pytest.raises(DatasetError):
            read_normal_map(tmp_path / "n.pfm")

    @pytest.mark.parametrize("header", [b"P6 3 2 255\n", b"PF 0 2 -1.0\n", b"garbage"])
    def test_bad_header(self, tmp_path, header):
        (tmp_path / "n.pfm").write_bytes(header)
        with pytest.raises(DatasetError):
            read_normal_map(tmp_path / "n.pfm")

    def test_non_finite(self, tmp_path):
        data = np.full((1, 1, 3), np.nan, "<f4")
        (tmp_path / "n.pfm").write_bytes(b"PF 1 1 -1.0\n" + data.tobytes())
        with pytest.raises(DatasetError):
            read_normal_map(tmp_path / "n.pfm")

    def test_big_endian(self, tmp_path):
        data = np.array([[[0.0, 0.6, 0.8]]], ">f4")
        (tmp_path / "n.pfm").write_bytes(b"PF 1 1 1.0\n" + data.tobytes())
        np.testing.assert_allclose(read_normal_map(tmp_path / "n.pfm").normals[0, 0], [0.0, 0.6, 0.8], rtol=1e-7)


class TestDataset:
    def test_round_trip(self, dataset_dir, sample):
        back = read_dataset(dataset_dir)
        assert back.num_lights == sample.num_lights and back.name == "obj"
        np.testing.assert_allclose(back.light_dirs, sample.light_dirs, atol=1e-15)
        np.testing.assert_array_equal(back.mask, sample.mask)
        # the observation ratios I / L survive up to 16-bit quantization
        ratio = back.images / back.light_intensities[:, None, None]
        ref = sample.images / sample.light_intensities[:, None, None]
        np.testing.assert_allclose(ratio, ref, atol=2e-5)
        np.testing.assert_allclose(back.normals.normals, sample.normals.normals, atol=1e-7)

    def test_deterministic_files(self, tmp_path, sample):
        write_dataset(sample, tmp_path / "a")
        write_dataset(sample, tmp_path / "b")
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_drop_first(self, dataset_dir, sample):
        back = read_dataset(dataset_dir, drop_first=3)
        assert back.num_lights == sample.num_lights - 3
        np.testing.assert_allclose(back.light_dirs, sample.light_dirs[3:], atol=1e-15)
        with pytest.raises(DatasetError):
            read_dataset(dataset_dir, drop_first=sample.num_lights)

    def test_flip_gt(self, dataset_dir):
        a, b = read_dataset(dataset_dir), read_dataset(dataset_dir, flip_gt=True)
        np.testing.assert_array_equal(b.normals.normals, a.normals.normals[::-1])

    def test_single_column_intensities(self, dataset_dir, sample):
        lines = (dataset_dir / "light_intensities.txt").read_text().splitlines()
        (dataset_dir / "light_intensities.txt").write_text("".join(l.split()[0] + "\n" for l in lines))
        np.testing.assert_allclose(read_dataset(dataset_dir).light_intensities,
                                   [float(l.split()[0]) for l in lines])

    def test_count_mismatch(self, dataset_dir):
        lines = (dataset_dir / "light_directions.txt").read_text().splitlines()
        (dataset_dir / "light_directions.txt").write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DatasetError):
            read_dataset(dataset_dir)

    def test_resolution_mismatch(self, dataset_dir):
        cv2.imwrite(str(dataset_dir / "001.png"), np.zeros((5, 5), np.uint16))
        with pytest.raises(DatasetError):
            read_dataset(dataset_dir)

    def test_missing_file(self, dataset_dir):
        (dataset_dir / "mask.png").unlink()
        with pytest.raises(DatasetError):
            read_dataset(dataset_dir)

    def test_non_unit_direction_warns(self, dataset_dir, caplog):
        lines = (dataset_dir / "light_directions.txt").read_text().splitlines()
        x, y, z = (float(t) for t in lines[0].split())
        lines[0] = f"{2 * x} {2 * y} {2 * z}"
        (dataset_dir / "light_directions.txt").write_text("\n".join(lines) + "\n")
        with caplog.at_level(logging.WARNING, logger="photostereo.io"):
            back = read_dataset(dataset_dir)
        assert "not unit length" in caplog.text
        np.testing.assert_allclose(np.linalg.norm(back.light_dirs, axis=1), 1.0)

    @pytest.mark.parametrize("row", ["0 0 0", "0 0.6 -0.8", "1 2", "a b c"])
    def test_bad_direction(self, dataset_dir, row):
        lines = (dataset_dir / "light_directions.txt").read_text().splitlines()
        lines[0] = row
        (dataset_dir / "light_directions.txt").write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError):
            read_dataset(dataset_dir)

    def test_mat_ground_truth(self, dataset_dir, sample):
        from scipy.io import savemat

        (dataset_dir / "normal_gt.pfm").unlink()
        savemat(dataset_dir / "Normal_gt.mat", {"Normal_gt": sample.normals.normals})
        back = read_dataset(dataset_dir)
        np.testing.assert_allclose(back.normals.normals, sample.normals.normals)

    def test_no_ground_truth(self, dataset_dir):
        (dataset_dir / "normal_gt.pfm").unlink()
        assert read_dataset(dataset_dir).normals is None


class TestImages:
    def test_eight_bit(self, tmp_path):
        cv2.imwrite(str(tmp_path / "a.png"), np.array([[0, 51, 255]], np.uint8))
        np.testing.assert_allclose(read_image(tmp_path / "a.png"), [[0.0, 0.2, 1.0]])

    def test_color_is_channel_mean(self, tmp_path):
        img = np.zeros((1, 2, 3), np.uint16)
        img[0, 0] = [65535, 0, 0]
        img[0, 1] = [0, 65535, 65535]
        cv2.imwrite(str(tmp_path / "c.png"), img)
        np.testing.assert_allclose(read_image(tmp_path / "c.png"), [[1 / 3, 2 / 3]])

    def test_unreadable(self, tmp_path):
        (tmp_path / "x.png").write_bytes(b"not an image")
        with pytest.raises(DatasetError):
            read_image(tmp_path / "x.png")
