import math
import warnings

import numpy as np
import pytest

from hfdenoise.errors import InvalidSigma
from hfdenoise.image import Image
from hfdenoise.wavelet import dwt2
from hfdenoise.wia import (
    PRESETS,
    NoiseConfig,
    corrupt,
    corrupt_direct,
    matched_direct_sigma,
    preset,
)


def residual_moments(fn, x, n):
    """Per-pixel running mean/variance of ``fn(k) - x`` over ``n`` draws."""
    s = np.zeros_like(x, dtype=np.float64)
    s2 = np.zeros_like(s)
    for k in range(n):
        r = fn(k) - x
        s += r
        s2 += r * r
    mean = s / n
    var = s2 / n - mean ** 2
    return mean, var * n / (n - 1)


@pytest.fixture
def image(rng):
    return Image(rng.uniform(0, 2000, size=(16, 16)).astype(np.float64), (0, 4095), "x")


class TestNoiseConfig:
    def test_presets(self):
        assert PRESETS["mayo2016"].sigmas == {"ll": 100, "lh": 200, "hl": 200, "hh": 150}
        assert PRESETS["mayo2020"].sigmas == {"ll": 25, "lh": 50, "hl": 50, "hh": 50}

    def test_preset_scaling(self):
        cfg = preset("mayo2016", span=2048.0)
        assert cfg.sigma_ll == pytest.approx(50.0)

    @pytest.mark.parametrize("bad", [-1.0, float("nan"), float("inf")])
    def test_invalid_sigma(self, bad):
        with pytest.raises(InvalidSigma):
            NoiseConfig(sigma_ll=bad)

    def test_warns_when_ll_dominates(self):
        with pytest.warns(UserWarning):
            NoiseConfig(10, 1, 1, 1)

    def test_pixel_std(self):
        assert PRESETS["mayo2016"].pixel_std() == pytest.approx(math.sqrt(112500) / 2)


class TestCorrupt:
    def test_zero_sigma_is_identity(self, image):
        out = corrupt(image, NoiseConfig(0, 0, 0, 0), 3)
        np.testing.assert_allclose(out.data, image.data, atol=1e-6)
        assert out.intensity_range == image.intensity_range and out.shape == image.shape

    def test_deterministic(self, image):
        cfg = NoiseConfig(seed=7)
        a = corrupt(image, cfg, 11).data
        b = corrupt(image, cfg, 11).data
        assert np.array_equal(a, b)
        assert not np.array_equal(a, corrupt(image, cfg, 12).data)
        assert not np.array_equal(a, corrupt(image, NoiseConfig(seed=8), 11).data)

    def test_order_independent(self, image):
        cfg = NoiseConfig(seed=3)
        first = [corrupt(image, cfg, k).data for k in range(3)]
        second = [corrupt(image, cfg, k).data for k in (2, 0, 1)]
        assert np.array_equal(first[2], second[0]) and np.array_equal(first[0], second[1])

    def test_float32_input_keeps_dtype(self, image):
        img = Image(image.data.astype(np.float32), image.intensity_range)
        assert corrupt(img, NoiseConfig(), 0).data.dtype == np.float32

    def test_ll_untouched_when_sigma_ll_zero(self, image):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            cfg = NoiseConfig(0, 50, 50, 50)
        out = corrupt(image, cfg, 0)
        np.testing.assert_allclose(dwt2(out).ll, dwt2(image).ll, atol=1e-6)

    def test_variance_identity_and_zero_mean(self, image):
        # Monte-Carlo oracle: orthonormality => per-pixel variance = sum(sigma^2)/4
        cfg = PRESETS["mayo2016"]
        n = 10_000
        mean, var = residual_moments(lambda k: corrupt(image.data, cfg, k), image.data, n)
        expected = (100 ** 2 + 200 ** 2 + 200 ** 2 + 150 ** 2) / 4
        assert expected == 28125.0
        assert abs(var.mean() / expected - 1) <= 0.03
        # a block's mean residual is n_LL / 2, so the grand mean has SE sigma_LL / sqrt(n * pixels)
        se = cfg.sigma_ll / math.sqrt(n * image.data.size)
        assert abs(mean.mean()) <= 3 * se


class TestCorruptDirect:
    def test_zero_sigma_identity(self, image):
        np.testing.assert_array_equal(corrupt_direct(image, 0.0, 5).data, image.data)

    def test_invalid(self, image):
        with pytest.raises(InvalidSigma):
            corrupt_direct(image, -1.0, 0)

    def test_deterministic(self, image):
        assert np.array_equal(corrupt_direct(image, 5.0, 1, seed=2).data,
                              corrupt_direct(image, 5.0, 1, seed=2).data)

    def test_std_and_mean(self, image):
        sigma, n = 40.0, 10_000
        mean, var = residual_moments(lambda k: corrupt_direct(image.data, sigma, k), image.data, n)
        assert abs(math.sqrt(var.mean()) / sigma - 1) <= 0.03
        assert abs(mean.mean()) <= 3 * sigma / math.sqrt(n * image.data.size)

    def test_matched_sigma(self):
        assert matched_direct_sigma(PRESETS["mayo2016"]) == pytest.approx(math.sqrt(28125.0))
