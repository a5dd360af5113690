"""
Quality and rate metrics: PSNR (RGB and YUV), differentiable MS-SSIM and
Bjontegaard deltas between rate-distortion curves.

Images are channel-first reals in [0, 1] unless a `peak` says otherwise.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np
from scipy import integrate, interpolate

from octave_codec.exceptions import ConfigError, ContractError, DomainError
from octave_codec.tensor import Tensor, avg_pool2, no_grad, separable_blur

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

# BT.601 full range; U and V carry a +0.5 offset for [0, 1] images.
RGB_TO_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
YUV_OFFSET = np.array([0.0, 0.5, 0.5])


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.square(np.subtract(a, b, dtype=np.float64))))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at PSNR_CAP (also for identical inputs)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ContractError(f"psnr inputs differ in shape: {a.shape} vs {b.shape}")
    mse = _mse(a, b)
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * math.log10(peak**2 / mse), PSNR_CAP)


def rgb_to_yuv(image: np.ndarray) -> np.ndarray:
    """Convert a channel-first RGB image (or batch) to YUV."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 3 or image.shape[-3] != 3:
        raise ContractError(f"expected 3 colour channels on axis -3, got {image.shape}")
    yuv = np.einsum("ij,...jhw->...ihw", RGB_TO_YUV, image)
    return yuv + YUV_OFFSET[:, None, None]


def psnr_yuv(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """(6*PSNR_Y + PSNR_U + PSNR_V) / 8."""
    ya, yb = rgb_to_yuv(a), rgb_to_yuv(b)
    y, u, v = (psnr(ya[..., i, :, :], yb[..., i, :, :], peak) for i in range(3))
    return (6.0 * y + u + v) / 8.0


@dataclass(frozen=True)
class MsSsimConfig:
    """
    MS-SSIM parameters. With `weights` unset the standard five weights are
    truncated to `scales` entries and renormalized.
    """

    scales: int = 5
    weights: Optional[tuple[float, ...]] = None
    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self) -> None:
        if self.scales < 1:
            raise ConfigError(f"MS-SSIM needs at least one scale, got {self.scales}")
        if self.weights is None:
            if self.scales > len(MSSSIM_WEIGHTS):
                raise ConfigError(f"default weights cover at most {len(MSSSIM_WEIGHTS)} scales")
            base = MSSSIM_WEIGHTS[: self.scales]
            object.__setattr__(self, "weights", tuple(w / sum(base) for w in base))
        assert self.weights is not None
        if len(self.weights) != self.scales:
            raise ConfigError(f"{len(self.weights)} weights for {self.scales} scales")
        if abs(sum(self.weights) - 1.0) > 1e-6:
            raise ConfigError(f"MS-SSIM weights must sum to 1, got {sum(self.weights)}")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ConfigError(f"window size must be odd, got {self.window_size}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.data_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.data_range) ** 2

    @property
    def c3(self) -> float:
        return self.c2 / 2.0

    @property
    def min_size(self) -> int:
        return self.window_size * 2 ** (self.scales - 1)

    def window(self) -> np.ndarray:
        coords = np.arange(self.window_size, dtype=np.float64) - self.window_size // 2
        g = np.exp(-(coords**2) / (2.0 * self.sigma**2))
        return g / g.sum()


def scales_for_size(size: int, cfg: MsSsimConfig) -> MsSsimConfig:
    """Largest MS-SSIM config (at most cfg.scales) that fits `size`."""
    scales = cfg.scales
    while scales > 1 and cfg.window_size * 2 ** (scales - 1) > size:
        scales -= 1
    if scales == cfg.scales:
        return cfg
    logger.warning(f"Images of size {size} are too small for {cfg.scales} MS-SSIM scales; using {scales}")
    return MsSsimConfig(scales=scales, window_size=cfg.window_size, sigma=cfg.sigma, k1=cfg.k1, k2=cfg.k2)


def _as_batch(x: Union[Tensor, np.ndarray]) -> Tensor:
    if isinstance(x, Tensor):
        t = x
    else:
        arr = np.asarray(x)
        t = Tensor(arr, dtype=arr.dtype if arr.dtype in (np.float32, np.float64) else None)
    if t.ndim == 3:
        t = t.reshape(1, *t.shape)
    if t.ndim != 4:
        raise ContractError(f"MS-SSIM expects (N, C, H, W) or (C, H, W), got {t.shape}")
    return t


def ms_ssim(a: Union[Tensor, np.ndarray], b: Union[Tensor, np.ndarray], cfg: Optional[MsSsimConfig] = None) -> Tensor:
    """
    Multi-scale SSIM, differentiable with respect to both inputs.

    Per scale j the contrast-structure term cs_j = 2*(s_ab + C3) / (s_a^2 + s_b^2 + C2)
    is averaged over valid window positions; at the coarsest scale the
    luminance term multiplies it before averaging. Per-scale means are
    raised to their weights and multiplied. The result is averaged over
    channels and images.
    """
    cfg = cfg or MsSsimConfig()
    x, y = _as_batch(a), _as_batch(b)
    if x.shape != y.shape:
        raise ContractError(f"MS-SSIM inputs differ in shape: {x.shape} vs {y.shape}")
    if min(x.shape[2:]) < cfg.min_size:
        raise ConfigError(
            f"MS-SSIM with {cfg.scales} scales needs images of at least {cfg.min_size}x{cfg.min_size}, got {x.shape[2:]}"
        )
    window = cfg.window()
    assert cfg.weights is not None
    result: Optional[Tensor] = None
    for j, weight in enumerate(cfg.weights):
        mu_x = separable_blur(x, window)
        mu_y = separable_blur(y, window)
        sigma_xx = separable_blur(x * x, window) - mu_x * mu_x
        sigma_yy = separable_blur(y * y, window) - mu_y * mu_y
        sigma_xy = separable_blur(x * y, window) - mu_x * mu_y
        # contrast times structure; with C3 = C2/2 the standard deviations cancel
        cs_map = 2.0 * (sigma_xy + cfg.c3) / (sigma_xx + sigma_yy + cfg.c2)
        if j == cfg.scales - 1:
            luminance = (2.0 * mu_x * mu_y + cfg.c1) / (mu_x * mu_x + mu_y * mu_y + cfg.c1)
            cs_map = luminance * cs_map
        term = cs_map.mean(axis=(2, 3)).clamp_min(1e-6) ** weight
        result = term if result is None else result * term
        if j < cfg.scales - 1:
            x, y = avg_pool2(x), avg_pool2(y)
    assert result is not None
    return result.mean()


def ms_ssim_value(a: np.ndarray, b: np.ndarray, cfg: Optional[MsSsimConfig] = None) -> float:
    with no_grad():
        return ms_ssim(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), cfg).item()


QualityMetric = Literal["psnr", "psnr_yuv", "msssim"]
FitMethod = Literal["polyfit", "pchip"]


@dataclass(frozen=True)
class RDPoint:
    bpp: float
    psnr: float
    msssim: float
    psnr_yuv: Optional[float] = None

    def __post_init__(self) -> None:
        values = [self.bpp, self.psnr, self.msssim] + ([] if self.psnr_yuv is None else [self.psnr_yuv])
        if not all(math.isfinite(v) for v in values):
            raise ConfigError(f"RD point has non-finite values: {self}")
        if self.bpp <= 0:
            raise ConfigError(f"RD point needs a positive rate, got {self.bpp}")

    def quality(self, metric: QualityMetric) -> float:
        value = getattr(self, metric)
        if value is None:
            raise ConfigError(f"RD point carries no {metric} value")
        return float(value)


def _curve(points: Sequence[RDPoint], metric: QualityMetric) -> tuple[np.ndarray, np.ndarray]:
    if len(points) < 4:
        raise ConfigError(f"Bjontegaard deltas need at least 4 points per curve, got {len(points)}")
    rate = np.array([p.bpp for p in points], dtype=np.float64)
    if np.any(np.diff(rate) <= 0):
        raise ConfigError("RD points must have strictly increasing bpp")
    quality = np.array([p.quality(metric) for p in points], dtype=np.float64)
    return np.log(rate), quality


def _mean_over(x: np.ndarray, y: np.ndarray, lo: float, hi: float, method: FitMethod) -> float:
    """Mean of the curve fitted through (x, y) over [lo, hi]."""
    if method == "polyfit":
        antiderivative = np.polyint(np.polyfit(x, y, 3))
        area = np.polyval(antiderivative, hi) - np.polyval(antiderivative, lo)
    elif method == "pchip":
        order = np.argsort(x)
        xs, ys = x[order], y[order]
        if np.any(np.diff(xs) <= 0):
            raise ConfigError("piecewise fitting needs strictly monotone abscissae")
        samples, step = np.linspace(lo, hi, num=100, retstep=True)
        area = integrate.trapezoid(interpolate.pchip_interpolate(xs, ys, samples), dx=step)
    else:
        raise ConfigError(f"unknown Bjontegaard method {method!r}")
    return float(area) / (hi - lo)


def _overlap(a: np.ndarray, b: np.ndarray, what: str) -> tuple[float, float]:
    lo = max(a.min(), b.min())
    hi = min(a.max(), b.max())
    if hi <= lo:
        raise DomainError(f"curves do not overlap in {what}")
    return float(lo), float(hi)


def bd_rate(
    anchor: Sequence[RDPoint],
    test: Sequence[RDPoint],
    metric: QualityMetric = "psnr",
    method: FitMethod = "polyfit",
) -> float:
    """Average rate difference of `test` against `anchor` in percent (negative is better)."""
    anchor_rate, anchor_q = _curve(anchor, metric)
    test_rate, test_q = _curve(test, metric)
    lo, hi = _overlap(anchor_q, test_q, "quality")
    diff = _mean_over(test_q, test_rate, lo, hi, method) - _mean_over(anchor_q, anchor_rate, lo, hi, method)
    return (math.exp(diff) - 1.0) * 100.0


def bd_psnr(
    anchor: Sequence[RDPoint],
    test: Sequence[RDPoint],
    metric: QualityMetric = "psnr",
    method: FitMethod = "polyfit",
) -> float:
    """Average quality difference of `test` against `anchor` (dB for PSNR metrics)."""
    anchor_rate, anchor_q = _curve(anchor, metric)
    test_rate, test_q = _curve(test, metric)
    lo, hi = _overlap(anchor_rate, test_rate, "rate")
    return _mean_over(test_rate, test_q, lo, hi, method) - _mean_over(anchor_rate, anchor_q, lo, hi, method)
