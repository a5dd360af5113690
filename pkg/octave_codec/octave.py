"""
Octave layers: GDN/IGDN, GoConv/GoTConv and the GoRes/GoTRes blocks.

Feature maps travel as an `OctavePair` of a high-resolution tensor and a
low-resolution tensor at exactly half its spatial size. Each layer has four
paths: H->H and L->L (intra-resolution), H->L (stride-2 convolution of the
H->H output) and L->H (stride-2 transposed convolution of the L->L output).
"""

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from octave_codec.exceptions import ConfigError, ContractError, ShapeError
from octave_codec.tensor import Parameter, Tensor, conv2d, reflect_pad, tconv2d

logger = logging.getLogger(__name__)

Nonlinearity = Literal["gdn", "relu", "tanh"]

BETA_FLOOR = 1e-6
GAMMA_FLOOR = 0.0
# Off-diagonal gamma surrogates start here rather than at zero, where the
# squared reparameterization has no gradient.
GAMMA_PEDESTAL = 2.0**-18
INSTANCE_NORM_EPS = 1e-5


class Module:
    """Parameter container; traversal order follows attribute assignment."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


@dataclass
class OctavePair:
    """High/low resolution feature maps; `low` is exactly half of `high` spatially."""

    high: Tensor
    low: Tensor

    def __post_init__(self) -> None:
        if self.high.ndim != 4 or self.low.ndim != 4:
            raise ShapeError(f"octave pair needs 4-D tensors, got {self.high.shape} / {self.low.shape}")
        h, w = self.high.shape[2:]
        if h % 2 or w % 2:
            raise ShapeError(f"high-resolution extents must be even, got {h}x{w}")
        if self.low.shape[2:] != (h // 2, w // 2):
            raise ShapeError(f"low-resolution extents {self.low.shape[2:]} are not half of {h}x{w}")
        if self.low.shape[0] != self.high.shape[0]:
            raise ShapeError("high and low maps disagree on batch size")

    @property
    def channels(self) -> tuple[int, int]:
        return self.high.shape[1], self.low.shape[1]


def split_channels(width: int, alpha: float) -> tuple[int, int]:
    """(high, low) channel counts with low = round(alpha * width)."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie strictly between 0 and 1, got {alpha}")
    low = int(math.floor(alpha * width + 0.5))
    high = width - low
    if low < 1 or high < 1:
        raise ConfigError(f"width {width} with alpha {alpha} leaves an empty branch")
    return high, low


def glorot_uniform(shape: tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ConvParams(Module):
    """Kernel and bias of one convolution path; `transposed` selects the (in, out, k, k) layout."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        transposed: bool = False,
        zero: bool = False,
    ):
        shape = (
            (in_channels, out_channels, kernel_size, kernel_size)
            if transposed
            else (out_channels, in_channels, kernel_size, kernel_size)
        )
        area = kernel_size * kernel_size
        values = glorot_uniform(shape, in_channels * area, out_channels * area, rng)
        self.kernel = Parameter(np.zeros(shape) if zero else values)
        self.bias = Parameter(np.zeros(out_channels))
        self.transposed = transposed
        self.in_channels = in_channels
        self.out_channels = out_channels


class GdnParams(Module):
    """
    GDN/IGDN parameters stored as surrogates.

    Effective values are beta = b**2 + BETA_FLOOR and gamma = g**2 + GAMMA_FLOOR,
    so the constraints hold after any optimizer update. A fresh layer has
    gamma = `gamma_diagonal` on the diagonal and GAMMA_PEDESTAL**2 (about
    1.5e-11) off it, not exactly zero.
    """

    def __init__(self, channels: int, beta: float = 1.0, gamma_diagonal: float = 0.1):
        surrogate_gamma = np.full((channels, channels), GAMMA_PEDESTAL)
        np.fill_diagonal(surrogate_gamma, math.sqrt(gamma_diagonal - GAMMA_FLOOR))
        self.beta = Parameter(np.full(channels, math.sqrt(beta - BETA_FLOOR)))
        self.gamma = Parameter(surrogate_gamma)
        self.channels = channels

    @classmethod
    def from_effective(cls, beta: np.ndarray, gamma: np.ndarray) -> "GdnParams":
        beta = np.asarray(beta, dtype=np.float64)
        gamma = np.asarray(gamma, dtype=np.float64)
        if np.any(beta < BETA_FLOOR) or np.any(gamma < GAMMA_FLOOR):
            raise ConfigError("GDN needs beta >= floor and gamma >= 0")
        params = cls(len(beta))
        params.beta = Parameter(np.sqrt(beta - BETA_FLOOR))
        params.gamma = Parameter(np.sqrt(gamma - GAMMA_FLOOR))
        return params

    def effective_beta(self) -> Tensor:
        return self.beta * self.beta + BETA_FLOOR

    def effective_gamma(self) -> Tensor:
        return self.gamma * self.gamma + GAMMA_FLOOR


def _gdn_norm(x: Tensor, p: GdnParams) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ContractError(f"GDN over {p.channels} channels got input {x.shape}")
    gamma = p.effective_gamma().reshape(p.channels, p.channels, 1, 1)
    return conv2d(x * x, gamma, p.effective_beta())


def gdn(x: Tensor, p: GdnParams) -> Tensor:
    """y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2), per pixel."""
    return x * _gdn_norm(x, p) ** -0.5


def igdn(x: Tensor, p: GdnParams) -> Tensor:
    """y_i = x_i * sqrt(beta_i + sum_j gamma_ij x_j^2), per pixel."""
    return x * _gdn_norm(x, p).sqrt()


def instance_norm_relu(x: Tensor) -> Tensor:
    """Parameter-free instance normalization followed by ReLU."""
    mean = x.mean(axis=(2, 3), keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    return (centered * (var + INSTANCE_NORM_EPS) ** -0.5).relu()


Channels = Union[int, tuple[int, int]]


class GoConvParams(Module):
    """
    Parameters of one GoConv/GoTConv layer.

    `in_channels`/`out_channels` are a (high, low) split, or a plain int for a
    single-tensor input (first encoder layer) or output (last decoder layer).
    `transposed` selects GoTConv: intra paths become transposed convolutions.
    `reflect_padding` mirror-pads both branches before the intra paths.
    """

    def __init__(
        self,
        in_channels: Channels,
        out_channels: Channels,
        kernel_size: int,
        rng: np.random.Generator,
        *,
        transposed: bool = False,
        reflect_padding: int = 0,
        nonlinearity: Nonlinearity = "gdn",
        zero: bool = False,
    ):
        if kernel_size % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {kernel_size}")
        if reflect_padding > kernel_size // 2:
            raise ConfigError(f"reflection padding {reflect_padding} exceeds half kernel {kernel_size}")
        if nonlinearity not in ("gdn", "relu", "tanh"):
            raise ConfigError(f"unknown nonlinearity {nonlinearity!r}")
        self.kernel_size = kernel_size
        self.transposed = transposed
        self.reflect_padding = reflect_padding
        self.nonlinearity = nonlinearity
        self.in_channels = in_channels
        self.out_channels = out_channels

        k = kernel_size
        in_pair = isinstance(in_channels, tuple)
        out_pair = isinstance(out_channels, tuple)
        in_high = in_channels[0] if isinstance(in_channels, tuple) else in_channels
        out_high = out_channels[0] if isinstance(out_channels, tuple) else out_channels

        self.hh = ConvParams(in_high, out_high, k, rng, transposed=transposed, zero=zero)
        self.ll: Optional[ConvParams] = None
        self.hl: Optional[ConvParams] = None
        self.lh: Optional[ConvParams] = None
        if isinstance(in_channels, tuple):
            ll_out = out_channels[1] if isinstance(out_channels, tuple) else out_high
            self.ll = ConvParams(in_channels[1], ll_out, k, rng, transposed=transposed, zero=zero)
            self.lh = ConvParams(ll_out, out_high, k, rng, transposed=True, zero=zero)
        if isinstance(out_channels, tuple):
            self.hl = ConvParams(out_high, out_channels[1], k, rng, zero=zero)

        self.norm_high: Optional[GdnParams] = None
        self.norm_low: Optional[GdnParams] = None
        if nonlinearity == "gdn":
            self.norm_high = GdnParams(out_high)
            if self.ll is not None:
                self.norm_low = GdnParams(self.ll.out_channels)
        self.is_first = not in_pair
        self.is_last = not out_pair

    def conv_paths(self) -> dict[str, ConvParams]:
        paths = {"hh": self.hh, "ll": self.ll, "hl": self.hl, "lh": self.lh}
        return {name: path for name, path in paths.items() if path is not None}

    def check_input(self, pair: OctavePair) -> None:
        if not isinstance(self.in_channels, tuple):
            raise ContractError("this layer takes a single tensor, not an octave pair")
        if pair.channels != self.in_channels:
            raise ContractError(f"layer expects channels {self.in_channels}, got {pair.channels}")


def _normalize(x: Tensor, norm: Optional[GdnParams], nonlinearity: Nonlinearity, inverse: bool) -> Tensor:
    if nonlinearity == "gdn":
        assert norm is not None
        return igdn(x, norm) if inverse else gdn(x, norm)
    if nonlinearity == "relu":
        return instance_norm_relu(x)
    return x.tanh()


def _down(x: Tensor, path: ConvParams) -> Tensor:
    """f_down2: stride-2 convolution halving the spatial extents."""
    return conv2d(x, path.kernel, path.bias, stride=2, padding=path.kernel.shape[-1] // 2)


def _up(x: Tensor, path: ConvParams) -> Tensor:
    """g_up2: stride-2 transposed convolution doubling the spatial extents."""
    return tconv2d(x, path.kernel, path.bias, stride=2, padding=path.kernel.shape[-1] // 2, output_padding=1)


def _check_extents(x: Tensor, multiple: int) -> None:
    h, w = x.shape[2:]
    if h % multiple or w % multiple:
        raise ShapeError(f"spatial extents {h}x{w} must be divisible by {multiple}")


def _check_stride(stride: int, p: GoConvParams) -> None:
    if stride not in (1, 2):
        raise ConfigError(f"octave layers support stride 1 or 2, got {stride}")
    if stride == 2 and p.reflect_padding:
        raise ConfigError("reflection-padded octave layers run at stride 1")


def _intra_conv(x: Tensor, path: ConvParams, p: GoConvParams, stride: int) -> Tensor:
    r = p.reflect_padding
    x = reflect_pad(x, r)
    return conv2d(x, path.kernel, path.bias, stride=stride, padding=p.kernel_size // 2 - r)


def _intra_tconv(x: Tensor, path: ConvParams, p: GoConvParams, stride: int) -> Tensor:
    r = p.reflect_padding
    x = reflect_pad(x, r)
    return tconv2d(
        x, path.kernel, path.bias, stride=stride, padding=p.kernel_size // 2 + r, output_padding=stride - 1
    )


def goconv(pair: OctavePair, p: GoConvParams, stride: int = 1) -> OctavePair:
    """
    O^H = O^{H->H} + g_up2(O^{L->L}),  O^L = O^{L->L} + f_down2(O^{H->H}),
    with O^{H->H}, O^{L->L} the GDN-normalized intra-resolution convolutions.
    """
    _check_stride(stride, p)
    p.check_input(pair)
    if p.transposed or p.is_last:
        raise ContractError("goconv needs a GoConv layer with an octave output")
    _check_extents(pair.high, 2 * stride)
    assert p.ll is not None and p.lh is not None and p.hl is not None
    o_hh = _normalize(_intra_conv(pair.high, p.hh, p, stride), p.norm_high, p.nonlinearity, inverse=False)
    o_ll = _normalize(_intra_conv(pair.low, p.ll, p, stride), p.norm_low, p.nonlinearity, inverse=False)
    return OctavePair(o_hh + _up(o_ll, p.lh), o_ll + _down(o_hh, p.hl))


def goconv_first(x: Tensor, p: GoConvParams) -> OctavePair:
    """O^H = f(x), O^L = f_down2(O^H): the input is a single tensor."""
    if not p.is_first or p.transposed:
        raise ContractError("goconv_first needs a first-layer GoConv")
    if x.ndim != 4 or x.shape[1] != p.in_channels:
        raise ContractError(f"goconv_first expects {p.in_channels} input channels, got {x.shape}")
    _check_extents(x, 2)
    assert p.hl is not None
    o_h = _normalize(_intra_conv(x, p.hh, p, 1), p.norm_high, p.nonlinearity, inverse=False)
    return OctavePair(o_h, _down(o_h, p.hl))


def gotconv(pair: OctavePair, p: GoConvParams, stride: int = 1) -> OctavePair:
    """Mirror of goconv with transposed intra paths and IGDN; upsamples by `stride`."""
    _check_stride(stride, p)
    p.check_input(pair)
    if not p.transposed or p.is_last:
        raise ContractError("gotconv needs a GoTConv layer with an octave output")
    assert p.ll is not None and p.lh is not None and p.hl is not None
    o_hh = _normalize(_intra_tconv(pair.high, p.hh, p, stride), p.norm_high, p.nonlinearity, inverse=True)
    o_ll = _normalize(_intra_tconv(pair.low, p.ll, p, stride), p.norm_low, p.nonlinearity, inverse=True)
    return OctavePair(o_hh + _up(o_ll, p.lh), o_ll + _down(o_hh, p.hl))


def gotconv_last(pair: OctavePair, p: GoConvParams) -> Tensor:
    """O = O^{H->H} + g_up2(O^{L->L}): the output is a single tensor."""
    p.check_input(pair)
    if not p.transposed or not p.is_last:
        raise ContractError("gotconv_last needs a last-layer GoTConv")
    assert p.ll is not None and p.lh is not None
    o_hh = _normalize(_intra_tconv(pair.high, p.hh, p, 1), p.norm_high, p.nonlinearity, inverse=True)
    o_ll = _normalize(_intra_tconv(pair.low, p.ll, p, 1), p.norm_low, p.nonlinearity, inverse=True)
    return o_hh + _up(o_ll, p.lh)


class GoResParams(Module):
    """Two stride-1 octave layers; the block adds separate skips to each branch."""

    def __init__(self, first: GoConvParams, second: GoConvParams):
        for layer in (first, second):
            if not isinstance(layer.in_channels, tuple) or layer.in_channels != layer.out_channels:
                raise ConfigError(
                    f"residual layers must preserve width, got {layer.in_channels} -> {layer.out_channels}"
                )
        if first.out_channels != second.in_channels:
            raise ConfigError(f"residual layers disagree: {first.out_channels} vs {second.in_channels}")
        if first.transposed != second.transposed:
            raise ConfigError("residual layers must both be GoConv or both GoTConv")
        self.first = first
        self.second = second

    @classmethod
    def build(
        cls,
        channels: tuple[int, int],
        kernel_size: int,
        rng: np.random.Generator,
        *,
        transposed: bool = False,
        nonlinearity: Nonlinearity = "gdn",
        zero_init: bool = True,
    ) -> "GoResParams":
        first = GoConvParams(channels, channels, kernel_size, rng, transposed=transposed, nonlinearity=nonlinearity)
        second = GoConvParams(
            channels, channels, kernel_size, rng, transposed=transposed, nonlinearity=nonlinearity, zero=zero_init
        )
        return cls(first, second)

    @property
    def transposed(self) -> bool:
        return self.first.transposed


def gores(pair: OctavePair, p: GoResParams) -> OctavePair:
    if p.transposed:
        raise ContractError("gores needs GoConv inner layers")
    branch = goconv(goconv(pair, p.first, 1), p.second, 1)
    return OctavePair(pair.high + branch.high, pair.low + branch.low)


def gotres(pair: OctavePair, p: GoResParams) -> OctavePair:
    if not p.transposed:
        raise ContractError("gotres needs GoTConv inner layers")
    branch = gotconv(gotconv(pair, p.first, 1), p.second, 1)
    return OctavePair(pair.high + branch.high, pair.low + branch.low)
