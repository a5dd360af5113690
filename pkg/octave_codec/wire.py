"""
Little-endian byte reader/writer shared by the container and checkpoint formats.
"""

import struct
from typing import Any

from octave_codec.exceptions import FormatError


class ByteWriter:
    def __init__(self) -> None:
        self._parts: list[bytes] = []
        self._size = 0

    def pack(self, fmt: str, *values: Any) -> None:
        self.raw(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self._parts.append(bytes(data))
        self._size += len(data)

    def __len__(self) -> int:
        return self._size

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    """Sequential reader; every failure reports the byte offset it happened at."""

    def __init__(self, data: bytes, what: str = "stream"):
        self.data = memoryview(bytes(data))
        self.offset = 0
        self.what = what

    def fail(self, message: str, offset: int = -1) -> FormatError:
        return FormatError(f"{self.what}: {message}", self.offset if offset < 0 else offset)

    def take(self, count: int) -> bytes:
        if count < 0 or self.offset + count > len(self.data):
            raise self.fail(f"truncated, wanted {count} bytes, {self.remaining} left")
        chunk = bytes(self.data[self.offset : self.offset + count])
        self.offset += count
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def expect(self, magic: bytes) -> None:
        start = self.offset
        found = self.take(len(magic))
        if found != magic:
            raise self.fail(f"bad magic {found!r}, expected {magic!r}", start)

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def finish(self) -> None:
        if self.remaining:
            raise self.fail(f"{self.remaining} trailing bytes")
