import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfdenoise.errors import IndivisiblePatch, ShapeMismatch, TooSmall
from hfdenoise.image import Image
from hfdenoise.metrics import (
    PSNR_CAP_DB,
    MetricsReport,
    evaluate_pair,
    hf_ll_ratio,
    nps,
    psnr,
    ssim,
    ssim_torch,
    subband_difference,
    summarize,
)
from hfdenoise.wavelet import SubbandSet, idwt2


def textbook_ssim(x, y, peak, win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Direct per-window evaluation of the SSIM formula with Gaussian weights."""
    ax = np.arange(win) - (win - 1) / 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    vals = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            px, py = x[i:i + win, j:j + win], y[i:i + win, j:j + win]
            mx, my = (g * px).sum(), (g * py).sum()
            vx = (g * (px - mx) ** 2).sum()
            vy = (g * (py - my) ** 2).sum()
            cxy = (g * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def fixed_pairs(n=20, size=64):
    rng = np.random.default_rng(2024)
    pairs = []
    for k in range(n):
        yy, xx = np.mgrid[:size, :size]
        base = 100 * np.sin(xx / (3 + k)) + 80 * np.cos(yy / (5 + k % 4)) + rng.normal(0, 5, (size, size))
        pairs.append((base, base + rng.normal(0, 10 + 3 * k, (size, size))))
    return pairs


class TestPsnr:
    def test_identical_is_cap(self):
        x = np.random.default_rng(0).normal(size=(8, 8))
        assert psnr(x, x, 1.0) == PSNR_CAP_DB == 100.0

    def test_uniform_error(self):
        x = np.zeros((4, 4))
        assert psnr(x, x + 0.1, 1.0) == pytest.approx(20.0, abs=1e-12)

    def test_halving_mse(self):
        x = np.zeros((4, 4))
        e = 0.2
        gain = psnr(x, x + e / math.sqrt(2), 1.0) - psnr(x, x + e, 1.0)
        assert gain == pytest.approx(10 * math.log10(2), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            psnr(np.zeros((2, 2)), np.zeros((2, 4)), 1.0)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-4, 10), st.floats(1.01, 5))
    def test_monotone_in_mse(self, e, factor):
        x = np.zeros((4, 4))
        assert psnr(x, x + e * factor, 1.0) < psnr(x, x + e, 1.0)


class TestSsim:
    def test_self_similarity(self):
        x = np.random.default_rng(1).normal(size=(32, 32))
        assert ssim(x, x, 4.0) == 1.0

    def test_symmetry(self):
        a, b = fixed_pairs(1)[0]
        assert ssim(a, b, 400.0) == pytest.approx(ssim(b, a, 400.0), abs=1e-15)

    def test_matches_textbook_oracle(self):
        for a, b in fixed_pairs():
            assert abs(ssim(a, b, 400.0) - textbook_ssim(a, b, 400.0)) <= 1e-6

    def test_matches_skimage(self):
        from skimage.metrics import structural_similarity

        for a, b in fixed_pairs(5):
            ref = structural_similarity(a, b, data_range=400.0, gaussian_weights=True, sigma=1.5,
                                        use_sample_covariance=False)
            assert ssim(a, b, 400.0) == pytest.approx(ref, abs=1e-6)

    def test_torch_matches_numpy(self):
        import torch

        a, b = fixed_pairs(1)[0]
        t = ssim_torch(torch.from_numpy(a)[None, None], torch.from_numpy(b)[None, None], 400.0)
        assert float(t) == pytest.approx(ssim(a, b, 400.0), abs=1e-10)

    def test_bounds(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a, b = rng.normal(size=(2, 16, 16))
            assert -1 <= ssim(a, b, 1.0) <= 1
            assert ssim(a, b, 1.0) < 1

    def test_errors(self):
        with pytest.raises(TooSmall):
            ssim(np.zeros((8, 8)), np.ones((8, 8)), 1.0)
        with pytest.raises(ShapeMismatch):
            ssim(np.zeros((16, 16)), np.ones((16, 12)), 1.0)


class TestNps:
    def test_zero_residual(self):
        assert not np.any(nps(np.zeros((32, 32)), 16).power)

    def test_bins(self):
        r = nps(np.random.default_rng(0).normal(size=(32, 32)), 16)
        assert len(r.radial) == 8
        np.testing.assert_allclose(r.frequencies, np.arange(1, 9) / 16)

    def test_white_noise_is_flat(self):
        rng = np.random.default_rng(4)
        r = nps(rng.normal(size=(100, 16, 1600)), 16)  # 10,000 patches
        assert r.n_patches == 10_000
        assert r.power.std() / r.power.mean() <= 0.1

    def test_total_power_is_variance(self):
        rng = np.random.default_rng(5)
        x = rng.normal(0, 3, size=(256, 256))
        r = nps(x, 32)
        assert abs(r.total_power / x.var() - 1) <= 0.02

    def test_sinusoid_lands_in_one_bin(self):
        p, k0 = 32, 5
        x = np.tile(np.sin(2 * np.pi * k0 * np.arange(64) / p), (64, 1))
        r = nps(x, p)
        assert int(np.argmax(r.power)) + 1 == k0
        assert r.power[k0 - 1] / r.power.sum() > 0.999

    def test_indivisible(self):
        with pytest.raises(IndivisiblePatch):
            nps(np.zeros((30, 30)), 16)


class TestSubbandDifference:
    def test_identical(self):
        x = np.random.default_rng(6).normal(size=(8, 8))
        assert subband_difference(x, x) == {"ll": 0.0, "lh": 0.0, "hl": 0.0, "hh": 0.0}

    def test_ll_only_perturbation(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(16, 16))
        z = np.zeros((8, 8))
        b = a + idwt2(SubbandSet(rng.normal(size=(8, 8)), z, z, z))
        d = subband_difference(a, b)
        assert d["ll"] > 0
        assert max(d["lh"], d["hl"], d["hh"]) <= 1e-6

    def test_sums_to_image_mse(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a, b = rng.normal(size=(2, 12, 20)) * 100
            d = subband_difference(a, b)
            mse = np.mean((a - b) ** 2)
            assert abs(sum(d.values()) / mse - 1) <= 1e-6

    def test_ratio(self):
        assert hf_ll_ratio({"ll": 1.0, "lh": 2.0, "hl": 3.0, "hh": 4.0}) == pytest.approx(3.0)
        assert hf_ll_ratio({"ll": 0.0, "lh": 2.0, "hl": 3.0, "hh": 4.0}) is None


class TestReport:
    def test_summary_means(self):
        rng = np.random.default_rng(9)
        ref = [Image(rng.uniform(0, 100, (32, 32)), (0, 100), f"i{k}") for k in range(3)]
        reps = [evaluate_pair(r, r.with_data(r.data + rng.normal(0, 2, r.shape))) for r in ref]
        s = summarize(reps)
        assert s["count"] == 3
        assert s["psnr_db"] == pytest.approx(np.mean([r.psnr_db for r in reps]))
        assert s["ssim_percent"] == pytest.approx(100 * np.mean([r.ssim for r in reps]))
        assert set(reps[0].to_dict()["subband_mse"]) == {"ll", "lh", "hl", "hh"}
        assert isinstance(reps[0], MetricsReport)
