"""Synthetic dataset generator and PPM/PGM round-trips."""

import numpy as np
import pytest

from gibrss import ContractError, synth_dataset
from gibrss.data import (NOISE_SIGMA, class_color, fill_polygon, load_dataset,
                         read_pgm, read_ppm, save_dataset, write_pgm,
                         write_ppm)
from gibrss.errors import FileFormatError


class TestSynth:
    def test_empty(self):
        assert synth_dataset(0, 64, 3, 0) == []

    def test_determinism(self):
        a = synth_dataset(3, 64, 3, 9)
        b = synth_dataset(3, 64, 3, 9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.labels, y.labels)
        c = synth_dataset(3, 64, 3, 10)
        assert any(not np.array_equal(x.labels, y.labels) for x, y in zip(a, c))

    def test_item_depends_on_index_only(self):
        full = synth_dataset(5, 64, 3, 4)
        np.testing.assert_array_equal(full[2].image, synth_dataset(3, 64, 3, 4)[2].image)

    def test_labels_in_range_and_shapes_match(self):
        for item in synth_dataset(4, 64, 4, 1):
            assert item.image.shape == (64, 64, 3)
            assert item.labels.shape == (64, 64)
            assert item.labels.min() >= 0 and item.labels.max() < 4
            assert item.image.min() >= 0.0 and item.image.max() <= 1.0

    def test_region_mean_color_within_3_sigma(self):
        for item in synth_dataset(6, 64, 3, 2):
            for c in np.unique(item.labels):
                mask = item.labels == c
                if mask.sum() < 30:
                    continue
                mean = item.image[mask].mean(axis=0)
                tol = 3 * NOISE_SIGMA / np.sqrt(mask.sum()) + 1e-9
                assert np.abs(mean - class_color(c)).max() < max(tol, 3 * NOISE_SIGMA)

    def test_contracts(self):
        with pytest.raises(ContractError):
            synth_dataset(2, 16, 3, 0)
        with pytest.raises(ContractError):
            synth_dataset(2, 64, 1, 0)


def test_fill_polygon_square():
    # unit-aligned square covering pixel centers 1..2 in both axes
    pts = [(0.9, 0.9), (0.9, 3.1), (3.1, 3.1), (3.1, 0.9)]
    mask = fill_polygon(pts, 5, 5)
    expected = np.zeros((5, 5), dtype=bool)
    expected[1:3, 1:3] = True
    np.testing.assert_array_equal(mask, expected)


def test_fill_polygon_even_odd_self_intersection():
    # bow-tie: the crossing region is filled on both lobes, middle follows
    # the even-odd rule (each scanline has two crossings per lobe)
    pts = [(0.0, 0.0), (4.0, 4.0), (0.0, 4.0), (4.0, 0.0)]
    mask = fill_polygon(pts, 4, 4)
    assert mask.any()
    assert not mask.all()


class TestImageFiles:
    def test_ppm_roundtrip(self, tmp_path):
        img = np.round(np.random.default_rng(0).uniform(0, 1, (9, 7, 3)) * 255) / 255
        path = tmp_path / "x.ppm"
        write_ppm(path, img)
        back = read_ppm(path)
        np.testing.assert_allclose(back, img, atol=1e-12)

    def test_pgm_roundtrip(self, tmp_path):
        labels = np.random.default_rng(1).integers(0, 5, (6, 8))
        path = tmp_path / "x.pgm"
        write_pgm(path, labels)
        np.testing.assert_array_equal(read_pgm(path), labels)

    def test_ppm_header_comments_tolerated(self, tmp_path):
        path = tmp_path / "c.ppm"
        with open(path, "wb") as f:
            f.write(b"P6\n# a comment\n2 1\n255\n" + bytes([10, 20, 30, 40, 50, 60]))
        img = read_ppm(path)
        assert img.shape == (1, 2, 3)
        np.testing.assert_allclose(img[0, 0], np.array([10, 20, 30]) / 255.0)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n1 1\n255\n000")
        with pytest.raises(FileFormatError):
            read_ppm(path)

    def test_byte_identical_rewrites(self, tmp_path):
        img = np.random.default_rng(2).uniform(0, 1, (8, 8, 3))
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_ppm(a, img)
        write_ppm(b, img)
        assert a.read_bytes() == b.read_bytes()


def test_dataset_save_load_roundtrip(tmp_path):
    data = synth_dataset(3, 64, 3, 5)
    manifest = save_dataset(data, tmp_path / "ds", classes=3)
    back, classes = load_dataset(manifest)
    assert classes == 3
    assert [b.id for b in back] == [d.id for d in data]
    for orig, loaded in zip(data, back):
        np.testing.assert_array_equal(loaded.labels, orig.labels)
        # images pass through 8-bit quantization
        assert np.abs(loaded.image - orig.image).max() <= 0.5 / 255 + 1e-12
