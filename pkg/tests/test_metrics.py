"""
Tests for PSNR, MS-SSIM and Bjontegaard deltas.
"""

import logging

import numpy as np
import pytest
from numpy.lib.stride_tricks import sliding_window_view
from scipy.interpolate import PchipInterpolator

from octave_codec.exceptions import ConfigError, ContractError, DomainError
from octave_codec.metrics import (
    PSNR_CAP,
    MsSsimConfig,
    RDPoint,
    bd_psnr,
    bd_rate,
    ms_ssim,
    ms_ssim_value,
    psnr,
    psnr_yuv,
    rgb_to_yuv,
    scales_for_size,
)

ANCHOR_BPP = [0.25, 0.5, 1.0, 2.0]
ANCHOR_PSNR = [28.0, 31.0, 34.0, 37.0]


def _curve(bpp, quality):
    return [RDPoint(bpp=b, psnr=q, msssim=0.9) for b, q in zip(bpp, quality)]


def _ms_ssim_reference(a, b, cfg):
    """
    MS-SSIM from 2-D window sums at every valid position, with the contrast
    and structure terms kept apart.
    """
    g = cfg.window()
    window = np.outer(g, g)

    def local_mean(x):
        return np.einsum("nchwij,ij->nchw", sliding_window_view(x, window.shape, axis=(2, 3)), window)

    score = np.ones(a.shape[:2])
    for j, weight in enumerate(cfg.weights):
        mu_a, mu_b = local_mean(a), local_mean(b)
        var_a = local_mean(a * a) - mu_a**2
        var_b = local_mean(b * b) - mu_b**2
        cov = local_mean(a * b) - mu_a * mu_b
        sd_a, sd_b = np.sqrt(np.maximum(var_a, 0.0)), np.sqrt(np.maximum(var_b, 0.0))
        contrast = (2 * sd_a * sd_b + cfg.c2) / (var_a + var_b + cfg.c2)
        structure = (cov + cfg.c3) / (sd_a * sd_b + cfg.c3)
        term = contrast * structure
        if j == cfg.scales - 1:
            term = term * (2 * mu_a * mu_b + cfg.c1) / (mu_a**2 + mu_b**2 + cfg.c1)
        score *= np.maximum(term.mean(axis=(2, 3)), 1e-6) ** weight
        h, w = a.shape[2] // 2 * 2, a.shape[3] // 2 * 2
        a = a[:, :, :h, :w].reshape(*a.shape[:2], h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        b = b[:, :, :h, :w].reshape(*b.shape[:2], h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return float(score.mean())


def _bd_rate_reference(anchor_bpp, anchor_psnr, test_bpp, test_psnr):
    """Piecewise-cubic log-rate over quality, integrated with a 100-sample trapezoid rule."""
    lo = max(min(anchor_psnr), min(test_psnr))
    hi = min(max(anchor_psnr), max(test_psnr))
    samples = np.linspace(lo, hi, 100)

    def mean_log_rate(bpp, quality):
        y = PchipInterpolator(quality, np.log(bpp))(samples)
        step = samples[1] - samples[0]
        return step * (y.sum() - 0.5 * (y[0] + y[-1])) / (hi - lo)

    diff = mean_log_rate(test_bpp, test_psnr) - mean_log_rate(anchor_bpp, anchor_psnr)
    return (np.exp(diff) - 1.0) * 100.0


class TestPsnr:
    """Tests for PSNR variants."""

    def test_identical_images_hit_cap(self, rng):
        x = rng.uniform(size=(3, 8, 8))
        assert psnr(x, x) == PSNR_CAP
        assert psnr_yuv(x, x) == PSNR_CAP

    def test_known_value(self):
        assert psnr(np.zeros((3, 4, 4)), np.full((3, 4, 4), 0.1)) == pytest.approx(20.0)
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 25.5), peak=255.0) == pytest.approx(20.0)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))

    def test_gray_maps_to_neutral_chroma(self):
        yuv = rgb_to_yuv(np.full((3, 2, 2), 0.5))
        np.testing.assert_allclose(yuv, 0.5)

    def test_yuv_weights_luma(self):
        a = np.full((3, 4, 4), 0.5)
        b = a.copy()
        b[0] += 0.01
        assert psnr_yuv(a, b) != psnr(a, b)


class TestMsSsim:
    """Tests for the differentiable MS-SSIM."""

    def test_config_defaults(self):
        cfg = MsSsimConfig(scales=3)
        assert sum(cfg.weights) == pytest.approx(1.0)
        assert cfg.c3 == pytest.approx(cfg.c2 / 2)
        assert cfg.min_size == 44
        assert cfg.window().sum() == pytest.approx(1.0)

    @pytest.mark.parametrize("kwargs", [{"scales": 0}, {"scales": 6}, {"window_size": 10}, {"scales": 2, "weights": (0.5, 0.6)}])
    def test_config_rejects_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            MsSsimConfig(**kwargs)

    def test_identical_images_score_one(self, rng):
        x = rng.uniform(size=(3, 64, 64))
        assert ms_ssim_value(x, x, MsSsimConfig(scales=3)) == pytest.approx(1.0)

    def test_noise_lowers_score_symmetrically(self, rng):
        cfg = MsSsimConfig(scales=3)
        x = rng.uniform(size=(3, 64, 64))
        y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        score = ms_ssim_value(x, y, cfg)
        assert 0.0 < score < 1.0
        assert ms_ssim_value(y, x, cfg) == pytest.approx(score)

    def test_matches_direct_reference(self, rng):
        cfg = MsSsimConfig(scales=3)
        x = rng.uniform(size=(2, 3, 64, 64))
        y = np.clip(x + 0.08 * rng.standard_normal(x.shape), 0, 1)
        assert ms_ssim_value(x, y, cfg) == pytest.approx(_ms_ssim_reference(x, y, cfg), abs=1e-6)

    def test_odd_extents_match_direct_reference(self, rng):
        cfg = MsSsimConfig(scales=2, window_size=7)
        x = rng.uniform(size=(1, 2, 29, 31))
        y = np.clip(0.9 * x + 0.05, 0, 1)
        assert ms_ssim_value(x, y, cfg) == pytest.approx(_ms_ssim_reference(x, y, cfg), abs=1e-6)

    def test_too_small_for_scales(self, rng):
        x = rng.uniform(size=(3, 32, 32))
        with pytest.raises(ConfigError, match="at least 44x44"):
            ms_ssim(x, x, MsSsimConfig(scales=3))

    def test_scales_for_size_reduces_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            cfg = scales_for_size(64, MsSsimConfig())
        assert cfg.scales == 3
        assert "MS-SSIM scales" in caplog.text
        assert scales_for_size(256, MsSsimConfig()).scales == 5

    def test_gradients(self, gradcheck, rng):
        cfg = MsSsimConfig(scales=2, window_size=3)
        a = rng.uniform(0.2, 0.8, size=(1, 2, 8, 8))
        b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
        assert gradcheck(lambda x, y: ms_ssim(x, y, cfg), a, b) < 1e-5


class TestBjontegaard:
    """Tests for BD-Rate and BD-PSNR."""

    @pytest.mark.parametrize("method", ["polyfit", "pchip"])
    def test_identical_curves(self, method):
        curve = _curve(ANCHOR_BPP, ANCHOR_PSNR)
        assert bd_rate(curve, curve, method=method) == pytest.approx(0.0, abs=1e-9)
        assert bd_psnr(curve, curve, method=method) == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("method", ["polyfit", "pchip"])
    def test_half_rate_is_minus_fifty_percent(self, method):
        anchor = _curve(ANCHOR_BPP, ANCHOR_PSNR)
        test = _curve([b / 2 for b in ANCHOR_BPP], ANCHOR_PSNR)
        assert bd_rate(anchor, test, method=method) == pytest.approx(-50.0, abs=1e-6)

    @pytest.mark.parametrize("method", ["polyfit", "pchip"])
    def test_ninety_percent_rate_is_minus_ten_percent(self, method):
        anchor = _curve(ANCHOR_BPP, ANCHOR_PSNR)
        test = _curve([0.9 * b for b in ANCHOR_BPP], ANCHOR_PSNR)
        assert bd_rate(anchor, test, method=method) == pytest.approx(-10.0, abs=1e-6)

    def test_pchip_matches_trapezoid_reference(self):
        test_bpp = [0.2, 0.42, 0.95, 1.7]
        test_psnr = [28.3, 31.1, 34.4, 37.2]
        anchor, test = _curve(ANCHOR_BPP, ANCHOR_PSNR), _curve(test_bpp, test_psnr)
        expected = _bd_rate_reference(ANCHOR_BPP, ANCHOR_PSNR, test_bpp, test_psnr)
        assert expected < 0.0
        assert bd_rate(anchor, test, method="pchip") == pytest.approx(expected, rel=1e-9)

    @pytest.mark.parametrize("method", ["polyfit", "pchip"])
    def test_one_db_gain(self, method):
        anchor = _curve(ANCHOR_BPP, ANCHOR_PSNR)
        test = _curve(ANCHOR_BPP, [q + 1.0 for q in ANCHOR_PSNR])
        assert bd_psnr(anchor, test, method=method) == pytest.approx(1.0, abs=1e-6)
        assert bd_rate(anchor, test, method=method) < 0.0

    def test_needs_four_points(self):
        curve = _curve(ANCHOR_BPP[:3], ANCHOR_PSNR[:3])
        with pytest.raises(ConfigError):
            bd_rate(curve, curve)

    def test_needs_increasing_rate(self):
        curve = _curve([0.5, 0.25, 1.0, 2.0], ANCHOR_PSNR)
        with pytest.raises(ConfigError):
            bd_rate(curve, curve)

    def test_disjoint_curves(self):
        anchor = _curve(ANCHOR_BPP, ANCHOR_PSNR)
        test = _curve(ANCHOR_BPP, [q + 20.0 for q in ANCHOR_PSNR])
        with pytest.raises(DomainError):
            bd_rate(anchor, test)

    def test_unknown_method(self):
        curve = _curve(ANCHOR_BPP, ANCHOR_PSNR)
        with pytest.raises(ConfigError):
            bd_rate(curve, curve, method="spline")

    @pytest.mark.parametrize("bpp,quality", [(0.0, 30.0), (-1.0, 30.0), (0.5, float("nan"))])
    def test_point_validation(self, bpp, quality):
        with pytest.raises(ConfigError):
            RDPoint(bpp=bpp, psnr=quality, msssim=0.9)

    def test_yuv_metric_needs_values(self):
        curve = _curve(ANCHOR_BPP, ANCHOR_PSNR)
        with pytest.raises(ConfigError):
            bd_rate(curve, curve, metric="psnr_yuv")
