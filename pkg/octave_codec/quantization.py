"""
B-bit uniform scalar quantizer with a zero-point and stochastic rounding.

A code-map channel y is mapped to integers

    q = clamp(Round(y / step + eps) + z, 0, 2**B - 1),  eps ~ U[-1/2, 1/2)

where step = (max - min) / (2**B - 1) and z = Round(-min / step). The dither
is drawn in step units, fresh per element, so the dequantized value
(q - z) * step is an unbiased estimate of y inside the representable range.
Round is half-away-from-zero everywhere.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from octave_codec.exceptions import ConfigError, ContractError
from octave_codec.octave import OctavePair
from octave_codec.tensor import Function, Tensor

logger = logging.getLogger(__name__)

QuantMode = Literal["stochastic", "deterministic"]


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def levels(bits: int) -> int:
    """Largest code value, 2**bits - 1."""
    return (1 << bits) - 1


def _check_bits(bits: int) -> None:
    if not isinstance(bits, (int, np.integer)) or isinstance(bits, bool) or not 1 <= bits <= 8:
        raise ConfigError(f"bits must be an integer in [1, 8], got {bits!r}")


@dataclass(frozen=True)
class QuantizerConfig:
    bits: int
    mode: QuantMode = "stochastic"
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        _check_bits(self.bits)
        if self.mode not in ("stochastic", "deterministic"):
            raise ConfigError(f"unknown quantizer mode {self.mode!r}")

    @property
    def stochastic(self) -> bool:
        return self.mode == "stochastic"

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class QuantizedPlane:
    """
    One quantized code-map channel plus what the decoder needs to rescale it.

    `min_val`/`max_val` are the float32 range actually used for the step, so
    a plane read back from a container dequantizes identically.
    """

    values: np.ndarray
    bits: int
    min_val: float
    max_val: float
    zero_point: int

    def __post_init__(self) -> None:
        _check_bits(self.bits)
        self.values = np.asarray(self.values, dtype=np.uint8)
        if self.values.ndim != 2:
            raise ContractError(f"a quantized plane is 2-D, got shape {self.values.shape}")
        top = levels(self.bits)
        if self.values.size and int(self.values.max()) > top:
            raise ContractError(f"plane holds values above {top} for {self.bits} bits")
        if not 0 <= self.zero_point <= top:
            raise ContractError(f"zero point {self.zero_point} outside [0, {top}]")
        if not self.min_val <= self.max_val:
            raise ContractError(f"plane range is inverted: {self.min_val} > {self.max_val}")

    @property
    def step(self) -> float:
        """Quantization step; 0.0 marks a degenerate constant plane."""
        return step_size(self.min_val, self.max_val, self.bits)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[0], self.values.shape[1]


def step_size(min_val: float, max_val: float, bits: int) -> float:
    if max_val <= min_val:
        return 0.0
    return (float(max_val) - float(min_val)) / levels(bits)


def zero_point(min_val: float, step: float, bits: int) -> int:
    if step == 0.0:
        return 0
    z = round_half_away(np.asarray(-float(min_val) / step))
    return int(np.clip(z, 0, levels(bits)))


def _float32_range(y: np.ndarray) -> tuple[float, float]:
    """Plane range widened to contain zero, rounded outward to float32."""
    lo = np.float32(min(float(y.min()), 0.0))
    hi = np.float32(max(float(y.max()), 0.0))
    if float(lo) > float(y.min()):
        lo = np.nextafter(lo, np.float32(-np.inf))
    if float(hi) < float(y.max()):
        hi = np.nextafter(hi, np.float32(np.inf))
    return float(lo), float(hi)


def quantize_values(
    y: np.ndarray,
    step: float,
    zero: int,
    bits: int,
    stochastic: bool,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Code values for `y` on a given grid; exposed for grid-level checks."""
    y = np.asarray(y, dtype=np.float64)
    if step == 0.0:
        return np.zeros(y.shape, dtype=np.uint8)
    scaled = y / step
    if stochastic:
        if rng is None:
            raise ContractError("stochastic quantization needs a random generator")
        scaled = scaled + rng.uniform(-0.5, 0.5, size=y.shape)
    q = round_half_away(scaled) + zero
    return np.clip(q, 0, levels(bits)).astype(np.uint8)


def quantize_channel(
    y: np.ndarray,
    cfg: QuantizerConfig,
    rng: Optional[np.random.Generator] = None,
) -> QuantizedPlane:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ContractError(f"quantize_channel expects a 2-D plane, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ContractError("cannot quantize a plane with NaN or infinite values")
    min_val, max_val = _float32_range(y)
    step = step_size(min_val, max_val, cfg.bits)
    z = zero_point(min_val, step, cfg.bits)
    if cfg.stochastic and rng is None:
        rng = cfg.make_rng()
    values = quantize_values(y, step, z, cfg.bits, cfg.stochastic, rng)
    return QuantizedPlane(values=values, bits=cfg.bits, min_val=min_val, max_val=max_val, zero_point=z)


def dequantize_channel(qp: QuantizedPlane) -> np.ndarray:
    """(q - z) * step, or the constant min_val for a degenerate plane."""
    step = qp.step
    if step == 0.0:
        return np.full(qp.values.shape, qp.min_val, dtype=np.float64)
    return (qp.values.astype(np.float64) - qp.zero_point) * step


def quantize_pair(
    y: OctavePair,
    cfg: QuantizerConfig,
    rng: Optional[np.random.Generator] = None,
) -> list[QuantizedPlane]:
    """One plane per channel: every HR channel first, then every LR channel."""
    if y.high.shape[0] != 1:
        raise ContractError(f"quantize_pair codes one image at a time, got batch {y.high.shape[0]}")
    if cfg.stochastic and rng is None:
        rng = cfg.make_rng()
    planes = [quantize_channel(channel, cfg, rng) for channel in y.high.data[0]]
    planes.extend(quantize_channel(channel, cfg, rng) for channel in y.low.data[0])
    logger.debug(f"Quantized {len(planes)} planes at {cfg.bits} bits ({cfg.mode})")
    return planes


def dequantize_pair(planes: list[QuantizedPlane], high_channels: int) -> OctavePair:
    """Inverse of quantize_pair: rebuilds a batch-1 OctavePair of real maps."""
    if not 0 < high_channels < len(planes):
        raise ContractError(f"cannot split {len(planes)} planes with {high_channels} HR channels")
    high = np.stack([dequantize_channel(p) for p in planes[:high_channels]])[None]
    low = np.stack([dequantize_channel(p) for p in planes[high_channels:]])[None]
    return OctavePair(Tensor(high), Tensor(low))


class QuantizeDequantize(Function):
    """Quantize then dequantize every (batch, channel) plane; backward is identity."""

    def forward(self, x: np.ndarray, *, cfg: QuantizerConfig, rng: Optional[np.random.Generator]) -> np.ndarray:
        out = np.empty_like(x)
        n, c = x.shape[:2]
        for i in range(n):
            for j in range(c):
                out[i, j] = dequantize_channel(quantize_channel(x[i, j], cfg, rng))
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray]:
        return (grad,)


def fake_quantize(x: Tensor, cfg: QuantizerConfig, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Differentiable quantize->dequantize using the straight-through estimator."""
    if x.ndim != 4:
        raise ContractError(f"fake_quantize expects a 4-D tensor, got {x.shape}")
    if cfg.stochastic and rng is None:
        rng = cfg.make_rng()
    return QuantizeDequantize.apply(x, cfg=cfg, rng=rng)


def fake_quantize_pair(
    y: OctavePair, cfg: QuantizerConfig, rng: Optional[np.random.Generator] = None
) -> OctavePair:
    if cfg.stochastic and rng is None:
        rng = cfg.make_rng()
    return OctavePair(fake_quantize(y.high, cfg, rng), fake_quantize(y.low, cfg, rng))
