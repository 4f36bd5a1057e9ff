"""Dataset assembly: balance, determinism, serialization."""

import numpy as np
import pytest

from unirestore.dataset import (
    base_textures,
    load_dataset,
    make_dataset,
    save_dataset,
    toy_degradation_classes,
)
from unirestore.degradations import DegradationSpec
from unirestore.errors import DataError, ShapeError


class TestBaseTextures:
    def test_shapes_and_range(self):
        imgs = base_textures(8, size=32, seed=0)
        assert len(imgs) == 8
        for img in imgs:
            assert img.shape == (3, 32, 32)
            assert img.dtype == np.float32
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_deterministic_and_diverse(self):
        a = base_textures(6, size=32, seed=1)
        b = base_textures(6, size=32, seed=1)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        # Different images actually differ.
        assert not np.array_equal(a[0], a[4])


class TestMakeDataset:
    def test_counting_and_balance(self):
        base = base_textures(4, size=32, seed=0)
        samples = make_dataset(base, toy_degradation_classes(), per_class=8, seed=3)
        assert len(samples) == 32
        labels = [s.label for s in samples]
        for k in range(4):
            assert labels.count(k) == 8

    def test_per_class_zero(self):
        base = base_textures(2, size=32, seed=0)
        assert make_dataset(base, toy_degradation_classes(), per_class=0) == []

    def test_byte_level_determinism(self):
        base = base_textures(4, size=32, seed=0)
        a = make_dataset(base, toy_degradation_classes(), per_class=3, seed=9)
        b = make_dataset(base, toy_degradation_classes(), per_class=3, seed=9)
        for s, t in zip(a, b):
            np.testing.assert_array_equal(s.clean, t.clean)
            np.testing.assert_array_equal(s.degraded, t.degraded)
            assert s.specs == t.specs

    def test_samples_within_class_differ(self):
        # Per-sample derived seeds: two noise samples share the recipe but
        # not the realization.
        base = base_textures(1, size=32, seed=0)
        samples = make_dataset(base, [DegradationSpec("noise", {"sigma": 0.1})], per_class=2, seed=0)
        assert not np.array_equal(samples[0].degraded, samples[1].degraded)

    def test_signed_range(self):
        base = base_textures(2, size=32, seed=0)
        for s in make_dataset(base, toy_degradation_classes(), per_class=2, seed=1):
            assert s.clean.min() >= -1.0 and s.clean.max() <= 1.0
            assert s.degraded.min() >= -1.0 and s.degraded.max() <= 1.0

    def test_non_multiple_of_8_rejected(self):
        bad = [np.zeros((3, 30, 32), np.float32)]
        with pytest.raises(ShapeError):
            make_dataset(bad, toy_degradation_classes(), per_class=1)

    def test_compound_recipe_gets_single_label(self):
        base = base_textures(2, size=32, seed=0)
        compound = (
            DegradationSpec("haze", {"transmission": 0.7, "airlight": 0.8}),
            DegradationSpec("rain", {"density": 0.1, "intensity": 0.6}),
        )
        samples = make_dataset(base, [compound], per_class=2, seed=0)
        assert all(s.label == 0 for s in samples)
        assert all(len(s.specs) == 2 for s in samples)


class TestDiskRoundTrip:
    def test_save_load(self, tmp_path):
        base = base_textures(4, size=32, seed=0)
        samples = make_dataset(base, toy_degradation_classes(), per_class=2, seed=5)
        save_dataset(tmp_path, samples)
        loaded = load_dataset(tmp_path)
        assert len(loaded) == len(samples)
        for s, t in zip(samples, loaded):
            assert s.label == t.label
            assert s.specs == t.specs
            # On-disk form is 8-bit; agreement is to quantization precision.
            np.testing.assert_allclose(s.clean, t.clean, atol=1.01 / 255.0)
            np.testing.assert_allclose(s.degraded, t.degraded, atol=1.01 / 255.0)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)
