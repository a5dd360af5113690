"""
Enhancement layer: the residual between the input and the network
reconstruction, rescaled to [0, 255] and coded by a pluggable backend.

Backends: 0 stores nothing, 1 requantizes the 8-bit residual by an integer
step and range-codes each channel, 2 hands an 8-bit PPM to an external
command (for instance a BPG encoder).
"""

import logging
import math
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from octave_codec.entropy import entropy_decode_plane, entropy_encode_plane
from octave_codec.exceptions import BackendError, ConfigError, ContractError, FormatError
from octave_codec.external import run_command
from octave_codec.images import decode_netpbm, encode_netpbm
from octave_codec.quantization import round_half_away
from octave_codec.wire import ByteReader, ByteWriter

logger = logging.getLogger(__name__)

BACKEND_NONE = 0
BACKEND_BUILTIN = 1
BACKEND_EXTERNAL = 2

BACKEND_IDS = {"none": BACKEND_NONE, "builtin": BACKEND_BUILTIN, "external": BACKEND_EXTERNAL}
BACKEND_NAMES = {v: k for k, v in BACKEND_IDS.items()}

ResidualBackendName = Literal["none", "builtin", "external"]

MAX_STEP = 64


@dataclass(frozen=True)
class ResidualConfig:
    """
    `quality` is the requantization step (1 = finest) for the built-in
    backend and is substituted as {quality} for an external one.
    """

    backend: ResidualBackendName = "builtin"
    quality: int = 4
    fallback: bool = True
    encode_command: str = ""
    decode_command: str = ""

    def __post_init__(self) -> None:
        if self.backend not in BACKEND_IDS:
            raise ConfigError(f"unknown residual backend {self.backend!r}")
        if self.backend == "builtin" and not 1 <= self.quality <= MAX_STEP:
            raise ConfigError(f"built-in residual quality must lie in [1, {MAX_STEP}], got {self.quality}")


@dataclass(frozen=True)
class ResidualRecord:
    backend: int
    r_min: float
    r_max: float
    payload: bytes = b""

    def __post_init__(self) -> None:
        if self.backend not in BACKEND_NAMES:
            raise ContractError(f"unknown residual backend id {self.backend}")
        if self.backend == BACKEND_NONE and self.payload:
            raise ContractError("an empty residual record cannot carry a payload")
        if not self.r_min <= self.r_max:
            raise ContractError(f"residual range is inverted: {self.r_min} > {self.r_max}")


def residual_range(r: np.ndarray) -> tuple[float, float]:
    """min/max of `r` as float32, rounded outward so the range covers every sample."""
    lo, hi = float(r.min()), float(r.max())
    lo32, hi32 = np.float32(lo), np.float32(hi)
    if float(lo32) > lo:
        lo32 = np.nextafter(lo32, np.float32(-np.inf))
    if float(hi32) < hi:
        hi32 = np.nextafter(hi32, np.float32(np.inf))
    return float(lo32), float(hi32)


def rescale_to_bytes(r: np.ndarray, r_min: float, r_max: float) -> np.ndarray:
    """Affine map [r_min, r_max] -> [0, 255] with round-half-away."""
    if r_max <= r_min:
        return np.zeros(r.shape, dtype=np.uint8)
    scaled = (np.asarray(r, dtype=np.float64) - r_min) / (r_max - r_min) * 255.0
    return np.clip(round_half_away(scaled), 0, 255).astype(np.uint8)


def rescale_from_bytes(v: np.ndarray, r_min: float, r_max: float) -> np.ndarray:
    if r_max <= r_min:
        return np.full(v.shape, r_min, dtype=np.float64)
    return r_min + np.asarray(v, dtype=np.float64) / 255.0 * (r_max - r_min)


def _step_bits(step: int) -> int:
    top = int(round_half_away(np.asarray(255.0 / step)))
    return max(1, math.ceil(math.log2(top + 1)))


def _builtin_encode(v: np.ndarray, step: int) -> bytes:
    bits = _step_bits(step)
    indices = np.clip(round_half_away(v.astype(np.float64) / step), 0, (1 << bits) - 1).astype(np.uint8)
    out = ByteWriter()
    out.pack("B", step)
    for channel in indices:
        payload = entropy_encode_plane(channel, bits)
        out.pack("I", len(payload))
        out.raw(payload)
    return out.getvalue()


def _builtin_decode(payload: bytes, shape: tuple[int, int, int]) -> np.ndarray:
    reader = ByteReader(payload, "residual payload")
    (step,) = reader.unpack("B")
    if not 1 <= step <= MAX_STEP:
        raise reader.fail(f"invalid requantization step {step}", 0)
    bits = _step_bits(step)
    channels = []
    for _ in range(shape[0]):
        (length,) = reader.unpack("I")
        start = reader.offset
        try:
            indices = entropy_decode_plane(reader.take(length), shape[1:], bits)
        except FormatError as e:
            raise reader.fail(f"bad residual channel ({e})", start) from e
        channels.append(np.clip(indices.astype(np.int64) * step, 0, 255))
    reader.finish()
    return np.stack(channels).astype(np.uint8)


def _external_encode(v: np.ndarray, cfg: ResidualConfig) -> bytes:
    with tempfile.TemporaryDirectory(prefix="octave-codec-") as tmp:
        src, dst = Path(tmp) / "residual.ppm", Path(tmp) / "residual.bin"
        src.write_bytes(encode_netpbm(v))
        run_command(cfg.encode_command, input=src, output=dst, quality=cfg.quality)
        return dst.read_bytes()


def _external_decode(payload: bytes, shape: tuple[int, int, int], decode_command: str) -> np.ndarray:
    with tempfile.TemporaryDirectory(prefix="octave-codec-") as tmp:
        src, dst = Path(tmp) / "residual.bin", Path(tmp) / "residual.ppm"
        src.write_bytes(payload)
        run_command(decode_command, input=src, output=dst, quality=0)
        v = decode_netpbm(dst.read_bytes())
    if v.shape != tuple(shape):
        raise FormatError(f"external residual decoder returned shape {v.shape}, expected {shape}", 0)
    return v


def encode_residual(r: np.ndarray, cfg: ResidualConfig) -> ResidualRecord:
    """Code a (3, H, W) residual; an external failure falls back to no residual if allowed."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3:
        raise ContractError(f"residual must be (C, H, W), got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ContractError("residual contains NaN or infinite values")
    if cfg.backend == "none":
        return ResidualRecord(BACKEND_NONE, 0.0, 0.0)
    r_min, r_max = residual_range(r)
    v = rescale_to_bytes(r, r_min, r_max)
    if cfg.backend == "builtin":
        return ResidualRecord(BACKEND_BUILTIN, r_min, r_max, _builtin_encode(v, cfg.quality))
    try:
        return ResidualRecord(BACKEND_EXTERNAL, r_min, r_max, _external_encode(v, cfg))
    except BackendError as e:
        if not cfg.fallback:
            raise
        logger.warning(f"Residual backend failed, storing no residual: {e} {e.diagnostics}".rstrip())
        return ResidualRecord(BACKEND_NONE, 0.0, 0.0)


def decode_residual(rec: ResidualRecord, shape: tuple[int, int, int], decode_command: str = "") -> np.ndarray:
    """Real-valued (C, H, W) residual; zeros for backend 0."""
    if rec.backend == BACKEND_NONE:
        return np.zeros(shape, dtype=np.float64)
    if rec.backend == BACKEND_BUILTIN:
        v = _builtin_decode(rec.payload, shape)
    else:
        v = _external_decode(rec.payload, shape, decode_command)
    return rescale_from_bytes(v, rec.r_min, rec.r_max)
