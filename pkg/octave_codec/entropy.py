"""
Lossless coding of quantized code-map planes.

The built-in coder is an adaptive binary range coder (carry-propagating,
LZMA style). Each B-bit value is coded MSB first along a binary tree whose
node index, together with a bucket of the left neighbour's value (the pixel
above for the first column), selects the adaptive probability.

Payload layout: one mode byte, then either the range-coded bytes
(MODE_CODED) or the values bit-packed MSB first (MODE_RAW). Raw storage is
used whenever coding would not be smaller.
"""

import logging
import tempfile
from pathlib import Path
from typing import Protocol

import numpy as np

from octave_codec.exceptions import ContractError, FormatError
from octave_codec.external import run_command
from octave_codec.images import decode_netpbm, encode_netpbm

logger = logging.getLogger(__name__)

MODE_CODED = 0
MODE_RAW = 1

PROB_BITS = 12
PROB_ONE = 1 << PROB_BITS
ADAPT_SHIFT = 5
TOP = 1 << 24
MASK32 = 0xFFFFFFFF
BUCKETS = 4
# Adapted probabilities saturate at 4065/4096, so each coded bin costs at
# least 0.011 bits: at most about 730 bins fit in one byte.
MAX_BINS_PER_BYTE = 1024
# A valid stream never reads past its last byte.
OVERRUN_SLACK = 4


class RangeEncoder:
    def __init__(self) -> None:
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self) -> None:
        if self.low < 0xFF000000 or self.low > MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode_bit(self, probs: list[int], index: int, bit: int) -> None:
        p = probs[index]
        bound = (self.range >> PROB_BITS) * p
        if bit:
            self.low += bound
            self.range -= bound
            probs[index] = p - (p >> ADAPT_SHIFT)
        else:
            self.range = bound
            probs[index] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
        while self.range < TOP:
            self.range = (self.range << 8) & MASK32
            self._shift_low()

    def finish(self) -> bytes:
        for _ in range(5):
            self._shift_low()
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 1  # the encoder always emits a leading zero byte
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self.pos < len(self.data):
            byte = self.data[self.pos]
        elif self.pos < len(self.data) + OVERRUN_SLACK:
            byte = 0
        else:
            raise FormatError(f"range-coded data ends after {len(self.data)} bytes", len(self.data))
        self.pos += 1
        return byte

    def decode_bit(self, probs: list[int], index: int) -> int:
        p = probs[index]
        bound = (self.range >> PROB_BITS) * p
        if self.code < bound:
            self.range = bound
            probs[index] = p + ((PROB_ONE - p) >> ADAPT_SHIFT)
            bit = 0
        else:
            self.code -= bound
            self.range -= bound
            probs[index] = p - (p >> ADAPT_SHIFT)
            bit = 1
        while self.range < TOP:
            self.range = (self.range << 8) & MASK32
            self.code = ((self.code << 8) | self._next()) & MASK32
        return bit


def _bucket_shift(bits: int) -> int:
    return max(bits - 2, 0)


def _context_base(plane: list[list[int]], row: int, col: int, bits: int) -> int:
    if col > 0:
        neighbour = plane[row][col - 1]
    elif row > 0:
        neighbour = plane[row - 1][col]
    else:
        neighbour = 0
    return (neighbour >> _bucket_shift(bits)) << bits


def _check_plane(plane: np.ndarray, bits: int) -> np.ndarray:
    if not 1 <= bits <= 8:
        raise ContractError(f"bits must lie in [1, 8], got {bits}")
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ContractError(f"expected a 2-D plane, got shape {plane.shape}")
    if plane.size and (plane.min() < 0 or plane.max() >= (1 << bits)):
        raise ContractError(f"plane values must lie in [0, {(1 << bits) - 1}] for {bits} bits")
    return plane.astype(np.int64)


def raw_size(shape: tuple[int, int], bits: int) -> int:
    return -(-shape[0] * shape[1] * bits // 8)


def _pack_raw(plane: np.ndarray, bits: int) -> bytes:
    flat = plane.astype(np.uint8).reshape(-1, 1)
    bit_matrix = np.unpackbits(flat, axis=1)[:, 8 - bits :]
    return np.packbits(bit_matrix.reshape(-1)).tobytes()


def _unpack_raw(data: bytes, shape: tuple[int, int], bits: int) -> np.ndarray:
    count = shape[0] * shape[1]
    if len(data) != raw_size(shape, bits):
        raise FormatError(f"raw plane holds {len(data)} bytes, expected {raw_size(shape, bits)}", 1)
    stream = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[: count * bits].reshape(count, bits)
    weights = 1 << np.arange(bits - 1, -1, -1)
    return (stream.astype(np.int64) @ weights).reshape(shape).astype(np.uint8)


def range_encode_plane(plane: np.ndarray, bits: int) -> bytes:
    """Range-coded bytes only, without the mode byte."""
    values = _check_plane(plane, bits).tolist()
    probs = [PROB_ONE // 2] * (BUCKETS << bits)
    encoder = RangeEncoder()
    for r, row in enumerate(values):
        for c, value in enumerate(row):
            base = _context_base(values, r, c, bits)
            node = 1
            for shift in range(bits - 1, -1, -1):
                bit = (value >> shift) & 1
                encoder.encode_bit(probs, base + node, bit)
                node = (node << 1) | bit
    return encoder.finish()


def range_decode_plane(data: bytes, shape: tuple[int, int], bits: int) -> np.ndarray:
    height, width = shape
    bins = height * width * bits
    if bins > MAX_BINS_PER_BYTE * max(len(data), 1):
        raise FormatError(f"{len(data)} bytes cannot hold a {height}x{width} plane at {bits} bits", 0)
    values = [[0] * width for _ in range(height)]
    probs = [PROB_ONE // 2] * (BUCKETS << bits)
    decoder = RangeDecoder(data)
    for r in range(height):
        row = values[r]
        for c in range(width):
            base = _context_base(values, r, c, bits)
            node = 1
            for _ in range(bits):
                node = (node << 1) | decoder.decode_bit(probs, base + node)
            row[c] = node - (1 << bits)
    return np.array(values, dtype=np.uint8).reshape(shape)


def entropy_encode_plane(plane: np.ndarray, bits: int) -> bytes:
    """Mode byte plus range-coded bytes, or raw bit-packing when that is smaller."""
    checked = _check_plane(plane, bits)
    coded = range_encode_plane(checked, bits)
    raw = _pack_raw(checked, bits)
    if len(coded) < len(raw):
        return bytes([MODE_CODED]) + coded
    logger.debug(f"Plane {checked.shape} at {bits} bits stored raw ({len(coded)} >= {len(raw)} bytes)")
    return bytes([MODE_RAW]) + raw


def entropy_decode_plane(payload: bytes, shape: tuple[int, int], bits: int) -> np.ndarray:
    if not 1 <= bits <= 8:
        raise FormatError(f"invalid bit depth {bits}", 0)
    if not payload:
        raise FormatError("empty plane payload", 0)
    mode = payload[0]
    if mode == MODE_CODED:
        try:
            return range_decode_plane(payload[1:], shape, bits)
        except FormatError as e:
            raise FormatError(e.message, e.offset + 1) from e
    if mode == MODE_RAW:
        return _unpack_raw(payload[1:], shape, bits)
    raise FormatError(f"unknown plane coding mode {mode}", 0)


class LosslessBackend(Protocol):
    """Exactly invertible coder for planes of B-bit integers."""

    def encode(self, plane: np.ndarray, bits: int) -> bytes: ...

    def decode(self, payload: bytes, shape: tuple[int, int], bits: int) -> np.ndarray: ...


class BuiltinLosslessBackend:
    def encode(self, plane: np.ndarray, bits: int) -> bytes:
        return entropy_encode_plane(plane, bits)

    def decode(self, payload: bytes, shape: tuple[int, int], bits: int) -> np.ndarray:
        return entropy_decode_plane(payload, shape, bits)


class ExternalLosslessBackend:
    """
    Codes each plane with an external grayscale image coder. Planes go out
    and come back as 8-bit PGM files; the coder must be lossless.
    """

    def __init__(self, encode_command: str, decode_command: str):
        self.encode_command = encode_command
        self.decode_command = decode_command

    def encode(self, plane: np.ndarray, bits: int) -> bytes:
        checked = _check_plane(plane, bits).astype(np.uint8)
        with tempfile.TemporaryDirectory(prefix="octave-codec-") as tmp:
            src, dst = Path(tmp) / "plane.pgm", Path(tmp) / "plane.bin"
            src.write_bytes(encode_netpbm(checked))
            run_command(self.encode_command, input=src, output=dst, quality=bits)
            return dst.read_bytes()

    def decode(self, payload: bytes, shape: tuple[int, int], bits: int) -> np.ndarray:
        with tempfile.TemporaryDirectory(prefix="octave-codec-") as tmp:
            src, dst = Path(tmp) / "plane.bin", Path(tmp) / "plane.pgm"
            src.write_bytes(payload)
            run_command(self.decode_command, input=src, output=dst, quality=bits)
            plane = decode_netpbm(dst.read_bytes())
        if plane.ndim != 2 or plane.shape != tuple(shape):
            raise FormatError(f"external decoder returned shape {plane.shape}, expected {shape}", 0)
        if plane.size and int(plane.max()) >= (1 << bits):
            raise FormatError(f"external decoder returned values above {bits} bits", 0)
        return plane
