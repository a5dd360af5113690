"""
The five-stage octave encoder/decoder pair and its configuration.

Encoder: reflect-padded 7x7 GoConv, three stride-2 3x3 GoConv each followed
by a GoRes block, reflect-padded 7x7 GoConv down to the code maps (HR at
h/8, LR at h/16). The decoder mirrors it with GoTConv layers and places a
GoTRes block after its first three layers only.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import numpy as np

from octave_codec.exceptions import ConfigError, ShapeError
from octave_codec.octave import (
    GoConvParams,
    GoResParams,
    Module,
    Nonlinearity,
    OctavePair,
    goconv,
    goconv_first,
    gores,
    gotconv,
    gotconv_last,
    gotres,
    split_channels,
)
from octave_codec.quantization import QuantizerConfig, QuantMode, fake_quantize_pair
from octave_codec.tensor import Tensor

logger = logging.getLogger(__name__)

REFLECT_PADDING = 3
# Stride-2 stages between the image and the HR code map.
DOWNSAMPLING_STAGES = 3
# Overall spatial factor between the image and the LR code map.
SPATIAL_FACTOR = 2 ** (DOWNSAMPLING_STAGES + 1)
# The LR code map must stay wider than the reflection padding.
MIN_EXTENT = SPATIAL_FACTOR * (REFLECT_PADDING + 1)


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture and rate configuration.

    `widths` are the five stage widths; the last one is the number of
    code-map channels c. Each width is split into (high, low) channels
    with low = round(alpha * width).
    """

    alpha: float = 0.5
    widths: tuple[int, ...] = (16, 32, 64, 128, 8)
    kernel_outer: int = 7
    kernel_inner: int = 3
    rates: tuple[int, ...] = (2, 4, 8)
    use_gdn: bool = True
    use_res: bool = True
    zero_init_residual: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "rates", tuple(int(b) for b in self.rates))
        if len(self.widths) != 5:
            raise ConfigError(f"expected 5 stage widths, got {len(self.widths)}")
        for width in self.widths:
            split_channels(width, self.alpha)
        c = self.map_channels
        if abs(self.alpha * c - round(self.alpha * c)) > 1e-9:
            raise ConfigError(f"alpha {self.alpha} does not split {c} code-map channels evenly")
        if not self.rates:
            raise ConfigError("rate set must not be empty")
        if len(set(self.rates)) != len(self.rates):
            raise ConfigError(f"rate set has duplicates: {self.rates}")
        for bits in self.rates:
            if not 1 <= bits <= 8:
                raise ConfigError(f"rates must lie in [1, 8], got {bits}")
        for name, k in (("kernel_outer", self.kernel_outer), ("kernel_inner", self.kernel_inner)):
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be a positive odd integer, got {k}")
        if self.kernel_outer // 2 < REFLECT_PADDING:
            raise ConfigError(f"kernel_outer must be at least {2 * REFLECT_PADDING + 1}")

    @classmethod
    def full_size(cls, **overrides: Any) -> "ModelConfig":
        """Full-size widths 64/128/256/512/8."""
        return cls(widths=(64, 128, 256, 512, 8), **overrides)

    @property
    def map_channels(self) -> int:
        return self.widths[-1]

    @property
    def nonlinearity(self) -> Nonlinearity:
        return "gdn" if self.use_gdn else "relu"

    @property
    def head_nonlinearity(self) -> Nonlinearity:
        return "gdn" if self.use_gdn else "tanh"

    def split(self, width: int) -> tuple[int, int]:
        return split_channels(width, self.alpha)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["widths"] = list(self.widths)
        data["rates"] = list(self.rates)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        values = dict(data)
        for key in ("widths", "rates"):
            if key in values:
                values[key] = tuple(values[key])
        return cls(**values)


@dataclass(frozen=True)
class Stage:
    kind: str
    kernel: int
    stride: int
    width: int


@dataclass
class TraceEntry:
    """One executed stage with the shapes it produced."""

    stage: Stage
    high_shape: tuple[int, ...]
    low_shape: Optional[tuple[int, ...]] = None


def _record(trace: Optional[list[TraceEntry]], stage: Stage, out: Any) -> None:
    if trace is None:
        return
    if isinstance(out, OctavePair):
        trace.append(TraceEntry(stage, out.high.shape, out.low.shape))
    else:
        trace.append(TraceEntry(stage, out.shape))


def check_image_extents(height: int, width: int) -> None:
    for extent in (height, width):
        if extent % SPATIAL_FACTOR:
            raise ShapeError(f"image extents {height}x{width} must be multiples of {SPATIAL_FACTOR}")
        if extent < MIN_EXTENT:
            raise ShapeError(f"image extents {height}x{width} must be at least {MIN_EXTENT}")


class Encoder(Module):
    """f_E: image -> {y^H, y^L}."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        w = config.widths
        ko, ki = config.kernel_outer, config.kernel_inner
        nl = config.nonlinearity
        self.stem = GoConvParams(3, config.split(w[0]), ko, rng, reflect_padding=REFLECT_PADDING, nonlinearity=nl)
        self.downs = [
            GoConvParams(config.split(w[i]), config.split(w[i + 1]), ki, rng, nonlinearity=nl)
            for i in range(DOWNSAMPLING_STAGES)
        ]
        self.blocks = [
            GoResParams.build(
                config.split(w[i + 1]), ki, rng, nonlinearity=nl, zero_init=config.zero_init_residual
            )
            for i in range(DOWNSAMPLING_STAGES)
            if config.use_res
        ]
        self.head = GoConvParams(
            config.split(w[3]),
            config.split(w[4]),
            ko,
            rng,
            reflect_padding=REFLECT_PADDING,
            nonlinearity=config.head_nonlinearity,
        )

    def architecture(self) -> list[Stage]:
        w = self.config.widths
        ko, ki = self.config.kernel_outer, self.config.kernel_inner
        stages = [Stage("goconv_first", ko, 1, w[0])]
        for i in range(DOWNSAMPLING_STAGES):
            stages.append(Stage("goconv", ki, 2, w[i + 1]))
            if self.config.use_res:
                stages.append(Stage("gores", ki, 1, w[i + 1]))
        stages.append(Stage("goconv", ko, 1, w[4]))
        return stages

    def forward(self, x: Tensor, trace: Optional[list[TraceEntry]] = None) -> OctavePair:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"encoder expects a batch of RGB images, got {x.shape}")
        check_image_extents(x.shape[2], x.shape[3])
        stages = iter(self.architecture())
        pair = goconv_first(x, self.stem)
        _record(trace, next(stages), pair)
        for i, layer in enumerate(self.downs):
            pair = goconv(pair, layer, stride=2)
            _record(trace, next(stages), pair)
            if self.blocks:
                pair = gores(pair, self.blocks[i])
                _record(trace, next(stages), pair)
        pair = goconv(pair, self.head, stride=1)
        _record(trace, next(stages), pair)
        return pair


class Decoder(Module):
    """f_D: {y^H, y^L} -> image."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        w = config.widths
        ko, ki = config.kernel_outer, config.kernel_inner
        nl = config.nonlinearity
        self.stem = GoConvParams(
            config.split(w[4]),
            config.split(w[3]),
            ko,
            rng,
            transposed=True,
            reflect_padding=REFLECT_PADDING,
            nonlinearity=nl,
        )
        self.ups = [
            GoConvParams(config.split(w[i + 1]), config.split(w[i]), ki, rng, transposed=True, nonlinearity=nl)
            for i in reversed(range(DOWNSAMPLING_STAGES))
        ]
        # GoTRes follows the stem and the first two upsampling layers.
        self.blocks = [
            GoResParams.build(
                config.split(width), ki, rng, transposed=True, nonlinearity=nl, zero_init=config.zero_init_residual
            )
            for width in (w[3], w[2], w[1])
            if config.use_res
        ]
        self.head = GoConvParams(
            config.split(w[0]),
            3,
            ko,
            rng,
            transposed=True,
            reflect_padding=REFLECT_PADDING,
            nonlinearity=config.head_nonlinearity,
        )

    def architecture(self) -> list[Stage]:
        w = self.config.widths
        ko, ki = self.config.kernel_outer, self.config.kernel_inner
        res = self.config.use_res
        stages = [Stage("gotconv", ko, 1, w[3])]
        if res:
            stages.append(Stage("gotres", ki, 1, w[3]))
        for i, width in enumerate((w[2], w[1], w[0])):
            stages.append(Stage("gotconv", ki, 2, width))
            if res and i < 2:
                stages.append(Stage("gotres", ki, 1, width))
        stages.append(Stage("gotconv_last", ko, 1, 3))
        return stages

    def forward(self, y: OctavePair, trace: Optional[list[TraceEntry]] = None) -> Tensor:
        stages = iter(self.architecture())
        pair = gotconv(y, self.stem, stride=1)
        _record(trace, next(stages), pair)
        if self.blocks:
            pair = gotres(pair, self.blocks[0])
            _record(trace, next(stages), pair)
        for i, layer in enumerate(self.ups):
            pair = gotconv(pair, layer, stride=2)
            _record(trace, next(stages), pair)
            if self.blocks and i < 2:
                pair = gotres(pair, self.blocks[i + 1])
                _record(trace, next(stages), pair)
        image = gotconv_last(pair, self.head)
        _record(trace, next(stages), image)
        return image


class CodecModel(Module):
    """Encoder parameters (Phi) and decoder parameters (Psi) under one config."""

    def __init__(self, config: Optional[ModelConfig] = None, seed: Optional[int] = 0):
        self.config = config or ModelConfig()
        sequence = np.random.SeedSequence(seed)
        rng = np.random.default_rng(sequence)
        self.encoder = Encoder(self.config, rng)
        self.decoder = Decoder(self.config, rng)
        # stochastic-rounding noise for callers that pass no generator
        self.noise_rng = np.random.default_rng(sequence.spawn(1)[0])

    @property
    def high_channels(self) -> int:
        return self.config.split(self.config.map_channels)[0]

    def encode_features(self, x: Tensor, trace: Optional[list[TraceEntry]] = None) -> OctavePair:
        return self.encoder.forward(x, trace)

    def decode_features(self, y: OctavePair, trace: Optional[list[TraceEntry]] = None) -> Tensor:
        expected = self.config.split(self.config.map_channels)
        if y.channels != expected:
            raise ShapeError(f"decoder expects code maps with channels {expected}, got {y.channels}")
        return self.decoder.forward(y, trace)

    def variable_rate_forward(
        self,
        x: Tensor,
        rates: Optional[tuple[int, ...]] = None,
        mode: QuantMode = "stochastic",
        rng: Optional[np.random.Generator] = None,
    ) -> dict[int, Tensor]:
        """Encode once, then quantize/dequantize/decode at every rate in `rates`."""
        rates = self.config.rates if rates is None else tuple(rates)
        if not rates:
            raise ConfigError("rate set must not be empty")
        if mode == "stochastic" and rng is None:
            rng = self.noise_rng
        y = self.encode_features(x)
        reconstructions: dict[int, Tensor] = {}
        for bits in rates:
            y_hat = fake_quantize_pair(y, QuantizerConfig(bits=bits, mode=mode), rng)
            reconstructions[bits] = self.decode_features(y_hat)
        return reconstructions

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())


def trace_summary(trace: list[TraceEntry]) -> list[str]:
    """Human-readable stage lines, as logged by the CLI."""
    lines = []
    for entry in trace:
        s = entry.stage
        shapes = f"{entry.high_shape}" if entry.low_shape is None else f"{entry.high_shape} / {entry.low_shape}"
        lines.append(f"{s.kind} {s.kernel}x{s.kernel} s{s.stride} ({s.width}) -> {shapes}")
    return lines


@dataclass
class ParameterCensus:
    """Parameter counts grouped by layer family."""

    gdn: int = 0
    conv: int = 0
    names: list[str] = field(default_factory=list)


def parameter_census(model: Module) -> ParameterCensus:
    census = ParameterCensus()
    for name, p in model.named_parameters():
        census.names.append(name)
        if ".norm_" in name:
            census.gdn += p.data.size
        else:
            census.conv += p.data.size
    return census
