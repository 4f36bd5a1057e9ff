"""Degradation operators: exact contracts, statistics, and range closure."""

import numpy as np
import pytest

from unirestore.degradations import (
    DegradationSpec,
    apply_blur,
    apply_gaussian_noise,
    apply_haze,
    apply_lowlight,
    apply_spec,
    apply_streaks,
    compose,
    gaussian_kernel,
)
from unirestore.errors import ConfigError


def _textured(seed=0, size=32):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 0.9, size=(1, 3, size, size)).astype(np.float32)


class TestGaussianNoise:
    def test_sigma_zero_identity(self):
        img = _textured()
        np.testing.assert_array_equal(apply_gaussian_noise(img, 0.0, seed=3), img)

    def test_sample_std_matches_sigma(self):
        # 1e5+ pixels of a mid-gray image: clipping is negligible, so the
        # sample std of the residual estimates sigma directly.
        sigma = 25.0 / 255.0
        img = np.full((1, 3, 200, 200), 0.5, np.float32)
        out = apply_gaussian_noise(img, sigma, seed=7)
        measured = float((out - img).std())
        assert abs(measured - sigma) / sigma < 0.05

    def test_clipping(self):
        img = np.ones((1, 3, 32, 32), np.float32)
        out = apply_gaussian_noise(img, 10.0 / 255.0, seed=1)
        assert out.max() <= 1.0 and out.min() >= 0.0

    def test_negative_sigma_rejected(self):
        with pytest.raises(ConfigError):
            apply_gaussian_noise(_textured(), -0.1)

    def test_determinism(self):
        img = _textured()
        a = apply_gaussian_noise(img, 0.1, seed=5)
        b = apply_gaussian_noise(img, 0.1, seed=5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, apply_gaussian_noise(img, 0.1, seed=6))


class TestHaze:
    def test_t1_identity(self):
        img = _textured()
        np.testing.assert_array_equal(apply_haze(img, 1.0, 0.5), img)

    def test_direct_substitution(self):
        img = np.zeros((1, 3, 8, 8), np.float32)
        np.testing.assert_allclose(apply_haze(img, 0.5, 1.0), 0.5)

    def test_t_to_zero_limit(self):
        out = apply_haze(_textured(), 1e-4, 1.0)
        np.testing.assert_allclose(out, 1.0, atol=2e-4)

    def test_t_zero_rejected(self):
        with pytest.raises(ConfigError):
            apply_haze(_textured(), 0.0, 0.5)

    def test_airlight_range(self):
        with pytest.raises(ConfigError):
            apply_haze(_textured(), 0.5, 1.5)


class TestLowlight:
    def test_identity(self):
        img = _textured()
        np.testing.assert_allclose(apply_lowlight(img, 1.0, 1.0), img, atol=1e-7)

    def test_gain_on_white(self):
        img = np.ones((1, 3, 8, 8), np.float32)
        np.testing.assert_allclose(apply_lowlight(img, 2.0, 0.2), 0.2, atol=1e-7)

    def test_gamma_on_half(self):
        img = np.full((1, 3, 8, 8), 0.5, np.float32)
        np.testing.assert_allclose(apply_lowlight(img, 2.0, 1.0), 0.25, atol=1e-7)

    def test_param_validation(self):
        with pytest.raises(ConfigError):
            apply_lowlight(_textured(), 0.5, 1.0)
        with pytest.raises(ConfigError):
            apply_lowlight(_textured(), 2.0, 0.0)


class TestStreaks:
    @pytest.mark.parametrize("kind", ["rain", "snow"])
    def test_density_zero_identity(self, kind):
        img = _textured()
        np.testing.assert_array_equal(apply_streaks(img, kind, 0.0, 0.7), img)

    @pytest.mark.parametrize("kind", ["rain", "snow"])
    def test_determinism(self, kind):
        img = _textured(size=64)
        a = apply_streaks(img, kind, 0.1, 0.7, seed=11)
        b = apply_streaks(img, kind, 0.1, 0.7, seed=11)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("kind", ["rain", "snow"])
    def test_coverage_tracks_density(self, kind):
        # On a black image the nonzero footprint is exactly the streak mask.
        img = np.zeros((1, 3, 64, 64), np.float32)
        density = 0.05
        fractions = []
        for seed in range(5):
            out = apply_streaks(img, kind, density, 0.8, seed=seed)
            fractions.append(float((out[0, 0] > 0).mean()))
        mean_frac = float(np.mean(fractions))
        assert 0.5 * density <= mean_frac <= 2.0 * density, fractions

    def test_negative_density_rejected(self):
        with pytest.raises(ConfigError):
            apply_streaks(_textured(), "rain", -0.1, 0.5)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            apply_streaks(_textured(), "sleet", 0.1, 0.5)


class TestBlur:
    def test_kernel_size_one_identity(self):
        img = _textured()
        np.testing.assert_array_equal(apply_blur(img, 1, 1.0), img)

    def test_constant_preserved(self):
        img = np.full((1, 3, 16, 16), 0.42, np.float32)
        np.testing.assert_allclose(apply_blur(img, 5, 1.5), 0.42, atol=1e-6)

    def test_delta_reproduces_kernel(self):
        img = np.zeros((1, 1, 17, 17), np.float32)
        img[0, 0, 8, 8] = 1.0
        out = apply_blur(img, 5, 1.2)
        kernel = gaussian_kernel(5, 1.2)
        np.testing.assert_allclose(out[0, 0, 6:11, 6:11], kernel, atol=1e-7)
        assert out[0, 0].sum() == pytest.approx(1.0, abs=1e-5)

    def test_against_naive_convolution(self):
        # Independent oracle: direct O(H*W*k^2) loop with reflect padding.
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, size=(1, 2, 12, 12)).astype(np.float32)
        k = gaussian_kernel(5, 1.5).astype(np.float64)
        pad = np.pad(img.astype(np.float64), ((0, 0), (0, 0), (2, 2), (2, 2)), mode="reflect")
        expected = np.zeros_like(img, dtype=np.float64)
        for c in range(2):
            for y in range(12):
                for x in range(12):
                    acc = 0.0
                    for dy in range(5):
                        for dx in range(5):
                            acc += pad[0, c, y + dy, x + dx] * k[dy, dx]
                    expected[0, c, y, x] = acc
        np.testing.assert_allclose(apply_blur(img, 5, 1.5), expected, atol=1e-6)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            apply_blur(_textured(), 4, 1.0)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ConfigError):
            apply_blur(_textured(), 5, 0.0)


class TestCompose:
    def test_empty_identity(self):
        img = _textured()
        np.testing.assert_array_equal(compose(img, []), img)

    def test_noop_specs_identity(self):
        img = _textured()
        specs = [
            DegradationSpec("noise", {"sigma": 0.0}),
            DegradationSpec("haze", {"transmission": 1.0, "airlight": 0.3}),
        ]
        np.testing.assert_array_equal(compose(img, specs), img)

    def test_order_matters(self):
        img = _textured(seed=4)
        low = DegradationSpec("lowlight", {"gamma": 2.2, "gain": 0.5})
        haze = DegradationSpec("haze", {"transmission": 0.5, "airlight": 0.9})
        a = compose(img, [low, haze])
        b = compose(img, [haze, low])
        assert not np.allclose(a, b)

    def test_spec_round_trip(self):
        spec = DegradationSpec("rain", {"density": 0.15, "intensity": 0.7}, seed=9, label=3)
        assert DegradationSpec.from_json(spec.to_json()) == spec

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            DegradationSpec("fog", {})


class TestRangeClosureProperty:
    def test_random_specs_stay_in_unit_range(self):
        rng = np.random.default_rng(123)
        img = _textured(seed=5, size=32)
        for trial in range(40):
            kind = rng.choice(["noise", "haze", "lowlight", "rain", "snow", "blur"])
            if kind == "noise":
                spec = DegradationSpec("noise", {"sigma": float(rng.uniform(0, 50 / 255))}, seed=trial)
            elif kind == "haze":
                spec = DegradationSpec(
                    "haze",
                    {"transmission": float(rng.uniform(0.05, 1.0)), "airlight": float(rng.uniform(0, 1))},
                )
            elif kind == "lowlight":
                spec = DegradationSpec(
                    "lowlight",
                    {"gamma": float(rng.uniform(1, 4)), "gain": float(rng.uniform(0.1, 1.0))},
                )
            elif kind in ("rain", "snow"):
                spec = DegradationSpec(
                    kind,
                    {"density": float(rng.uniform(0, 0.4)), "intensity": float(rng.uniform(0, 1))},
                    seed=trial,
                )
            else:
                spec = DegradationSpec(
                    "blur",
                    {"kernel_size": int(rng.choice([1, 3, 5, 7])), "sigma": float(rng.uniform(0.3, 3))},
                )
            out = apply_spec(img, spec)
            assert out.min() >= 0.0 and out.max() <= 1.0, spec
            assert out.dtype == np.float32
            np.testing.assert_array_equal(out, apply_spec(img, spec))
