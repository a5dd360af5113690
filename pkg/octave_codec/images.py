"""
Image I/O and geometry helpers.

PPM (P6) and PGM (P5) with maxval 255 are read and written here byte for
byte; every other format goes through Pillow. In memory an image is a
channel-first float64 array in [0, 1].
"""

import logging
import re
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from octave_codec.exceptions import ContractError, FormatError

logger = logging.getLogger(__name__)

NETPBM_SUFFIXES = {".ppm", ".pgm", ".pnm"}
_HEADER_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")

PathLike = Union[str, Path]


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Scale [0, 1] reals to bytes with round-half-away; out-of-range values saturate."""
    scaled = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def from_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) / 255.0


def encode_netpbm(pixels: np.ndarray) -> bytes:
    """P6 for (3, H, W) byte arrays, P5 for (H, W)."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise ContractError(f"netpbm output needs uint8 samples, got {pixels.dtype}")
    if pixels.ndim == 2:
        h, w = pixels.shape
        return b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes()
    if pixels.ndim == 3 and pixels.shape[0] == 3:
        _, h, w = pixels.shape
        return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels.transpose(1, 2, 0)).tobytes()
    raise ContractError(f"cannot store shape {pixels.shape} as netpbm")


def decode_netpbm(data: bytes) -> np.ndarray:
    """Inverse of encode_netpbm; returns (3, H, W) or (H, W) uint8."""
    tokens = []
    pos = 0
    for _ in range(4):
        match = _HEADER_TOKEN.match(data, pos)
        if match is None:
            raise FormatError("truncated netpbm header", pos)
        tokens.append(match.group(1))
        pos = match.end()
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported netpbm magic {magic!r}", 0)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as e:
        raise FormatError("malformed netpbm header", pos) from e
    if maxval != 255:
        raise FormatError(f"only 8-bit netpbm is supported, maxval is {maxval}", pos)
    pos += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    size = width * height * channels
    if len(data) - pos < size:
        raise FormatError(f"netpbm raster truncated, need {size} bytes", pos)
    raster = np.frombuffer(data, dtype=np.uint8, count=size, offset=pos)
    if channels == 1:
        return raster.reshape(height, width).copy()
    return raster.reshape(height, width, 3).transpose(2, 0, 1).copy()


def read_image(path: PathLike) -> np.ndarray:
    """Load an RGB image as a (3, H, W) float array in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() in NETPBM_SUFFIXES:
        pixels = decode_netpbm(path.read_bytes())
        if pixels.ndim == 2:
            pixels = np.repeat(pixels[None], 3, axis=0)
        return from_uint8(pixels)
    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"))
    return from_uint8(rgb.transpose(2, 0, 1))


def write_image(path: PathLike, image: np.ndarray) -> Path:
    """Store a (3, H, W) [0, 1] image; PPM by suffix, otherwise via Pillow."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = to_uint8(image)
    if path.suffix.lower() in NETPBM_SUFFIXES:
        path.write_bytes(encode_netpbm(pixels))
    else:
        Image.fromarray(pixels.transpose(1, 2, 0)).save(path)
    return path


def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    """Resize a (3, H, W) [0, 1] image to size x size with bilinear filtering."""
    if image.shape[1:] == (size, size):
        return image
    channels = []
    for plane in np.asarray(image, dtype=np.float32):
        resized = Image.fromarray(plane).resize((size, size), Image.Resampling.BILINEAR)
        channels.append(np.asarray(resized, dtype=np.float64))
    return np.clip(np.stack(channels), 0.0, 1.0)


def padded_extent(extent: int, multiple: int, minimum: int) -> int:
    return max(minimum, -(-extent // multiple) * multiple)


def pad_replicate(image: np.ndarray, multiple: int, minimum: int) -> np.ndarray:
    """Edge-replicate a (C, H, W) image up to multiples of `multiple` (at least `minimum`)."""
    _, h, w = image.shape
    ph = padded_extent(h, multiple, minimum) - h
    pw = padded_extent(w, multiple, minimum) - w
    if ph == 0 and pw == 0:
        return image
    return np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="edge")


def crop(image: np.ndarray, height: int, width: int) -> np.ndarray:
    return image[..., :height, :width]
