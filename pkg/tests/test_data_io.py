import math

import numpy as np
import pytest

from ntk_lab.data_io import (
    IdxConsistencyError,
    IdxFormatError,
    circle_dataset,
    gaussian_dataset,
    load_idx,
    sphere_dataset,
    write_idx_images,
    write_idx_labels,
)
from ntk_lab.limit_kernel import sigma_stack
from ntk_lab.nonlinearity import relu
from ntk_lab.numerics import RngStream


class TestCircle:
    def test_four_axis_points(self):
        ds = circle_dataset(4, angle_offset=0.0)
        expected = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
        assert np.allclose(ds.measure.points, expected, atol=1e-15)

    def test_unit_norms(self):
        ds = circle_dataset(17, angle_offset=0.3)
        norms = np.linalg.norm(ds.measure.points, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-15

    def test_gram_is_circulant(self):
        ds = circle_dataset(8)
        gram = sigma_stack(ds.measure, 1, 0.0, relu()).sigma(1)
        for i in range(8):
            for j in range(8):
                assert abs(gram[i, j] - gram[0, (j - i) % 8]) < 1e-12

    def test_count_validation(self):
        with pytest.raises(ValueError):
            circle_dataset(0)


class TestSphere:
    def test_unit_norms(self):
        ds = sphere_dataset(50, 5, RngStream(1))
        norms = np.linalg.norm(ds.measure.points, axis=1)
        assert np.max(np.abs(norms - 1.0)) < 1e-12

    def test_deterministic(self):
        a = sphere_dataset(10, 3, RngStream(2, 5))
        b = sphere_dataset(10, 3, RngStream(2, 5))
        assert np.array_equal(a.measure.points, b.measure.points)

    def test_pairwise_distinct(self):
        ds = sphere_dataset(200, 3, RngStream(3))
        assert np.unique(ds.measure.points, axis=0).shape[0] == 200

    def test_mean_concentrates(self):
        ds = sphere_dataset(1000, 3, RngStream(4))
        assert np.linalg.norm(ds.measure.points.mean(axis=0)) < 0.1

    def test_dimension_validation(self):
        with pytest.raises(ValueError):
            sphere_dataset(5, 1, RngStream(0))


class TestGaussian:
    def test_count_zero_empty(self):
        ds = gaussian_dataset(0, 7, RngStream(0))
        assert ds.measure.count == 0
        assert ds.measure.input_dim == 7

    def test_deterministic(self):
        a = gaussian_dataset(20, 4, RngStream(5, 1))
        b = gaussian_dataset(20, 4, RngStream(5, 1))
        assert np.array_equal(a.measure.points, b.measure.points)

    def test_row_norm_concentration(self):
        # chi-distributed row norms: P(26 <= |x| <= 30) > 0.996 at n0 = 784
        ds = gaussian_dataset(10_000, 784, RngStream(6))
        norms = np.linalg.norm(ds.measure.points, axis=1)
        frac = np.mean((norms >= 26.0) & (norms <= 30.0))
        assert frac >= 0.99
        assert abs(np.median(norms) - math.sqrt(784)) < 0.5


class TestIdx:
    def test_roundtrip_exact_pixels(self, tmp_path):
        images = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3)
        images[1] = 255 - images[1]
        img_path = tmp_path / "imgs.idx"
        write_idx_images(img_path, images)
        ds = load_idx(img_path)
        assert ds.measure.count == 2
        assert ds.measure.input_dim == 6
        expected = images.reshape(2, 6).astype(np.float64) * (1.0 / 255.0)
        assert np.array_equal(ds.measure.points, expected)
        recovered = np.round(ds.measure.points * 255.0).astype(np.uint8)
        assert np.array_equal(recovered, images.reshape(2, 6))

    def test_known_pixel_values(self, tmp_path):
        images = np.array([[[0, 1]], [[254, 255]]], dtype=np.uint8)
        img_path = tmp_path / "imgs.idx"
        write_idx_images(img_path, images)
        ds = load_idx(img_path)
        assert np.array_equal(ds.measure.points,
                              np.array([[0.0, 1 / 255], [254 / 255, 1.0]]))

    def test_labels_scalar_and_onehot(self, tmp_path):
        images = np.zeros((3, 2, 2), dtype=np.uint8)
        labels = np.array([3, 0, 9], dtype=np.uint8)
        write_idx_images(tmp_path / "i.idx", images)
        write_idx_labels(tmp_path / "l.idx", labels)
        ds = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
        assert np.array_equal(ds.targets, np.array([[3.0], [0.0], [9.0]]))
        ds = load_idx(tmp_path / "i.idx", tmp_path / "l.idx", label_mode="onehot")
        assert ds.targets.shape == (3, 10)
        assert np.array_equal(ds.targets.argmax(axis=1), labels)

    def test_limit(self, tmp_path):
        images = np.zeros((5, 2, 2), dtype=np.uint8)
        labels = np.arange(5, dtype=np.uint8)
        write_idx_images(tmp_path / "i.idx", images)
        write_idx_labels(tmp_path / "l.idx", labels)
        ds = load_idx(tmp_path / "i.idx", tmp_path / "l.idx", limit=2)
        assert ds.measure.count == 2
        assert ds.targets.shape == (2, 1)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes((0x00000802).to_bytes(4, "big") + b"\x00" * 8)
        with pytest.raises(IdxFormatError, match="0x00000802"):
            load_idx(path)

    def test_truncated_payload(self, tmp_path):
        import struct

        path = tmp_path / "short.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2) + b"\x00" * 7)
        with pytest.raises(IdxFormatError, match="expected 8"):
            load_idx(path)

    def test_count_mismatch(self, tmp_path):
        write_idx_images(tmp_path / "i.idx", np.zeros((3, 1, 1), dtype=np.uint8))
        write_idx_labels(tmp_path / "l.idx", np.zeros(4, dtype=np.uint8))
        with pytest.raises(IdxConsistencyError):
            load_idx(tmp_path / "i.idx", tmp_path / "l.idx")

    def test_manifest_and_digest(self, tmp_path):
        images = np.arange(8, dtype=np.uint8).reshape(2, 2, 2)
        write_idx_images(tmp_path / "i.idx", images)
        ds = load_idx(tmp_path / "i.idx")
        man = ds.manifest()
        assert man["N"] == 2
        assert man["n0"] == 4
        assert man["scaling"] == "pixels / 255"
        assert man["digest"] == ds.measure.digest
        # byte-identical file -> identical digest
        write_idx_images(tmp_path / "j.idx", images)
        assert load_idx(tmp_path / "j.idx").measure.digest == ds.measure.digest

    def test_digest_frozen_value(self):
        # guards the hashing convention (little-endian float64 + shape header)
        from ntk_lab.limit_kernel import EmpiricalMeasure

        m = EmpiricalMeasure(np.array([[0.0, 0.5], [1.0, -1.0]]))
        assert m.digest == (
            "c64011fd5bc2311dd8a73a7ba26adcd3101ad204aead4d3710cc4ffba4b77944"
        )
