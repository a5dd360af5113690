"""
The OCBS container: entropy-coded code-map planes (base layer) plus the
residual record (enhancement layer).

Layout, little-endian:

    header   "OCBS" | u16 version | u32 width | u32 height | u8 c
             | u8 alpha numerator | u8 alpha denominator | u8 bits | u8 flags
    c x      u16 plane width | u16 plane height | f32 min | f32 max | u8 zero point
             | u32 payload length | payload
    residual u8 backend | f32 r_min | f32 r_max | u32 payload length | payload

Width and height are the original image extents; the codec works on a copy
padded by edge replication and crops after decoding. Flag bit 0 marks planes
coded by the external lossless backend.
"""

import logging
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from octave_codec.entropy import BuiltinLosslessBackend, LosslessBackend
from octave_codec.exceptions import ConfigError, ContractError, FormatError
from octave_codec.images import crop, pad_replicate, padded_extent
from octave_codec.model import MIN_EXTENT, SPATIAL_FACTOR, CodecModel
from octave_codec.octave import split_channels
from octave_codec.quantization import QuantizedPlane, QuantizerConfig, QuantMode, dequantize_pair, quantize_pair
from octave_codec.residual import ResidualConfig, ResidualRecord, decode_residual, encode_residual
from octave_codec.tensor import Tensor, no_grad
from octave_codec.wire import ByteReader, ByteWriter

logger = logging.getLogger(__name__)

MAGIC = b"OCBS"
VERSION = 1
FLAG_EXTERNAL_LOSSLESS = 0x01
HEADER_FORMAT = "IIBBBBB"
HEADER_SIZE = len(MAGIC) + 2 + 13
PLANE_HEADER_FORMAT = "HHffBI"
RESIDUAL_HEADER_FORMAT = "BffI"


def alpha_fraction(alpha: float) -> Fraction:
    fraction = Fraction(alpha).limit_denominator(255)
    if fraction.numerator > 255:
        raise ConfigError(f"alpha {alpha} cannot be stored as u8/u8")
    return fraction


def plane_shapes(width: int, height: int, channels: int, alpha: Fraction) -> list[tuple[int, int]]:
    """(rows, cols) of every code-map plane for an image of the given extents."""
    padded_h = padded_extent(height, SPATIAL_FACTOR, MIN_EXTENT)
    padded_w = padded_extent(width, SPATIAL_FACTOR, MIN_EXTENT)
    high, low = split_channels(channels, float(alpha))
    return [(padded_h // 8, padded_w // 8)] * high + [(padded_h // 16, padded_w // 16)] * low


@dataclass
class Container:
    width: int
    height: int
    map_channels: int
    alpha: Fraction
    bits: int
    planes: list[QuantizedPlane]
    residual: ResidualRecord
    flags: int = 0

    @property
    def external_lossless(self) -> bool:
        return bool(self.flags & FLAG_EXTERNAL_LOSSLESS)


def _select_backend(flags: int, lossless: Optional[LosslessBackend]) -> LosslessBackend:
    if flags & FLAG_EXTERNAL_LOSSLESS:
        if lossless is None:
            raise ConfigError("container uses the external lossless backend but none is configured")
        return lossless
    return BuiltinLosslessBackend()


def container_to_bytes(container: Container, lossless: Optional[LosslessBackend] = None) -> bytes:
    if len(container.planes) != container.map_channels:
        raise ContractError(f"{len(container.planes)} planes for {container.map_channels} channels")
    backend = _select_backend(container.flags, lossless)
    out = ByteWriter()
    out.raw(MAGIC)
    out.pack("H", VERSION)
    out.pack(
        HEADER_FORMAT,
        container.width,
        container.height,
        container.map_channels,
        container.alpha.numerator,
        container.alpha.denominator,
        container.bits,
        container.flags,
    )
    shapes = plane_shapes(container.width, container.height, container.map_channels, container.alpha)
    for plane, shape in zip(container.planes, shapes):
        if plane.bits != container.bits:
            raise ContractError(f"plane coded at {plane.bits} bits in a {container.bits}-bit container")
        if plane.shape != shape:
            raise ContractError(
                f"plane is {plane.shape}, expected {shape} for a {container.width}x{container.height} image"
            )
        payload = backend.encode(plane.values, plane.bits)
        h, w = plane.shape
        out.pack(PLANE_HEADER_FORMAT, w, h, plane.min_val, plane.max_val, plane.zero_point, len(payload))
        out.raw(payload)
    rec = container.residual
    out.pack(RESIDUAL_HEADER_FORMAT, rec.backend, rec.r_min, rec.r_max, len(rec.payload))
    out.raw(rec.payload)
    return out.getvalue()


@dataclass
class _Layout:
    """Byte spans of a parsed container, for bit budgets."""

    header: int = 0
    base: int = 0
    enhancement: int = 0


def _parse(
    data: bytes, lossless: Optional[LosslessBackend], decode_planes: bool
) -> tuple[Container, _Layout]:
    reader = ByteReader(data, "container")
    reader.expect(MAGIC)
    (version,) = reader.unpack("H")
    if version != VERSION:
        raise reader.fail(f"unsupported version {version}", reader.offset - 2)
    header_at = reader.offset
    width, height, channels, num, den, bits, flags = reader.unpack(HEADER_FORMAT)
    if width == 0 or height == 0:
        raise reader.fail("image extents must be positive", header_at)
    if channels == 0:
        raise reader.fail("container declares no code-map channels", header_at + 8)
    if den == 0 or num >= den:
        raise reader.fail(f"invalid alpha {num}/{den}", header_at + 9)
    try:
        shapes = plane_shapes(width, height, channels, Fraction(num, den))
    except ConfigError as e:
        raise reader.fail(str(e), header_at + 8) from e
    if not 1 <= bits <= 8:
        raise reader.fail(f"invalid bit depth {bits}", header_at + 11)
    if flags & ~FLAG_EXTERNAL_LOSSLESS:
        raise reader.fail(f"unknown flags 0x{flags:02x}", header_at + 12)
    layout = _Layout(header=reader.offset)
    backend = _select_backend(flags, lossless) if decode_planes else None

    planes = []
    for index in range(channels):
        start = reader.offset
        w, h, min_val, max_val, zero, length = reader.unpack(PLANE_HEADER_FORMAT)
        if (h, w) != shapes[index]:
            raise reader.fail(f"plane {index} is {h}x{w}, expected {shapes[index][0]}x{shapes[index][1]}", start)
        payload_at = reader.offset
        payload = reader.take(length)
        if not decode_planes:
            continue
        assert backend is not None
        try:
            values = backend.decode(payload, (h, w), bits)
            planes.append(QuantizedPlane(values, bits, float(min_val), float(max_val), int(zero)))
        except FormatError as e:
            raise reader.fail(f"plane {index}: {e.message}", payload_at + e.offset) from e
        except ContractError as e:
            raise reader.fail(f"plane {index}: {e}", start) from e
    layout.base = reader.offset - layout.header

    start = reader.offset
    backend_id, r_min, r_max, length = reader.unpack(RESIDUAL_HEADER_FORMAT)
    payload = reader.take(length)
    try:
        residual = ResidualRecord(backend_id, float(r_min), float(r_max), payload)
    except ContractError as e:
        raise reader.fail(f"residual record: {e}", start) from e
    layout.enhancement = reader.offset - start
    reader.finish()
    container = Container(width, height, channels, Fraction(num, den), bits, planes, residual, flags)
    return container, layout


def container_from_bytes(data: bytes, lossless: Optional[LosslessBackend] = None) -> Container:
    return _parse(data, lossless, decode_planes=True)[0]


@dataclass(frozen=True)
class BitBudget:
    """Byte split of a container and the corresponding bits per pixel."""

    width: int
    height: int
    header_bytes: int
    base_bytes: int
    enhancement_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + self.base_bytes + self.enhancement_bytes

    @property
    def pixels(self) -> int:
        return self.width * self.height

    @property
    def bpp(self) -> float:
        return 8.0 * self.total_bytes / self.pixels

    @property
    def base_bpp(self) -> float:
        return 8.0 * (self.header_bytes + self.base_bytes) / self.pixels

    @property
    def enhancement_bpp(self) -> float:
        return 8.0 * self.enhancement_bytes / self.pixels

    @property
    def enhancement_share(self) -> float:
        return self.enhancement_bytes / self.total_bytes


def bit_budget(data: bytes) -> BitBudget:
    """Split a container into header, base-layer and enhancement-layer bytes."""
    container, layout = _parse(data, None, decode_planes=False)
    return BitBudget(container.width, container.height, layout.header, layout.base, layout.enhancement)


def _check_model(container: Container, model: CodecModel) -> None:
    if container.map_channels != model.config.map_channels:
        raise FormatError(
            f"container has {container.map_channels} code-map channels, model produces {model.config.map_channels}",
            len(MAGIC) + 2 + 8,
        )
    if container.alpha != alpha_fraction(model.config.alpha):
        raise FormatError(f"container alpha {container.alpha} does not match model alpha", len(MAGIC) + 2 + 9)


def _as_image(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ContractError(f"expected a (3, H, W) image, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError("image contains NaN or infinite values")
    return x


@dataclass
class EncodedImage:
    data: bytes
    budget: BitBudget
    base: np.ndarray
    encoder_seconds: float
    decoder_seconds: float


def encode_image_with_stats(
    x: np.ndarray,
    model: CodecModel,
    bits: int,
    residual: Optional[ResidualConfig] = None,
    mode: QuantMode = "stochastic",
    seed: Optional[int] = None,
    lossless: Optional[LosslessBackend] = None,
) -> EncodedImage:
    """
    Encode a (3, H, W) image in [0, 1]. `base` is the cropped network
    reconstruction the residual was taken against.
    """
    x = _as_image(x)
    residual = residual or ResidualConfig()
    cfg = QuantizerConfig(bits=bits, mode=mode, seed=seed)
    _, height, width = x.shape
    padded = pad_replicate(x, SPATIAL_FACTOR, MIN_EXTENT)

    with no_grad():
        started = time.perf_counter()
        y = model.encode_features(Tensor(padded[None]))
        encoder_seconds = time.perf_counter() - started
        planes = quantize_pair(y, cfg)
        started = time.perf_counter()
        x_bar = model.decode_features(dequantize_pair(planes, model.high_channels)).data[0]
        decoder_seconds = time.perf_counter() - started
    base = crop(x_bar.astype(np.float64), height, width)
    record = encode_residual(x - base, residual)

    container = Container(
        width=width,
        height=height,
        map_channels=len(planes),
        alpha=alpha_fraction(model.config.alpha),
        bits=bits,
        planes=planes,
        residual=record,
        flags=FLAG_EXTERNAL_LOSSLESS if lossless is not None else 0,
    )
    data = container_to_bytes(container, lossless)
    budget = bit_budget(data)
    logger.info(
        f"Encoded {width}x{height} at {bits} bits: {budget.total_bytes} bytes, "
        f"{budget.bpp:.4f} bpp (base {budget.base_bpp:.4f}, enhancement {budget.enhancement_bpp:.4f})"
    )
    return EncodedImage(data, budget, base, encoder_seconds, decoder_seconds)


def encode_image(
    x: np.ndarray,
    model: CodecModel,
    bits: int,
    residual: Optional[ResidualConfig] = None,
    mode: QuantMode = "stochastic",
    seed: Optional[int] = None,
    lossless: Optional[LosslessBackend] = None,
) -> bytes:
    return encode_image_with_stats(x, model, bits, residual, mode, seed, lossless).data


@dataclass
class DecodedImage:
    image: np.ndarray
    base: np.ndarray
    container: Container
    decoder_seconds: float


def decode_image_with_stats(
    data: bytes,
    model: CodecModel,
    lossless: Optional[LosslessBackend] = None,
    residual_decode_command: str = "",
) -> DecodedImage:
    container = container_from_bytes(data, lossless)
    _check_model(container, model)
    high, _ = model.config.split(container.map_channels)

    with no_grad():
        started = time.perf_counter()
        x_bar = model.decode_features(dequantize_pair(container.planes, high)).data[0]
        decoder_seconds = time.perf_counter() - started
    base = crop(x_bar.astype(np.float64), container.height, container.width)
    shape = (3, container.height, container.width)
    r = decode_residual(container.residual, shape, residual_decode_command)
    image = np.clip(base + r, 0.0, 1.0)
    return DecodedImage(image, base, container, decoder_seconds)


def decode_image(
    data: bytes,
    model: CodecModel,
    lossless: Optional[LosslessBackend] = None,
    residual_decode_command: str = "",
) -> np.ndarray:
    """x~ = clamp(x_bar + r'), cropped to the stored extents."""
    return decode_image_with_stats(data, model, lossless, residual_decode_command).image
