"""
Checkpoint files.

Layout (little-endian): magic "OCCM", u16 version, u32 length + UTF-8 JSON
holding the model config and free-form metadata, u32 tensor count, then per
parameter in traversal order: u8 ndim, ndim x u32 extents, float32 values.
"""

import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from octave_codec.exceptions import ConfigError
from octave_codec.model import CodecModel, ModelConfig
from octave_codec.wire import ByteReader, ByteWriter

logger = logging.getLogger(__name__)

MAGIC = b"OCCM"
VERSION = 1


def checkpoint_bytes(model: CodecModel, meta: Optional[dict[str, Any]] = None) -> bytes:
    out = ByteWriter()
    out.raw(MAGIC)
    out.pack("H", VERSION)
    header = json.dumps({"config": model.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    out.pack("I", len(header))
    out.raw(header)
    params = model.parameters()
    out.pack("I", len(params))
    for p in params:
        out.pack("B", p.data.ndim)
        for extent in p.data.shape:
            out.pack("I", extent)
        out.raw(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    return out.getvalue()


def model_from_bytes(data: bytes) -> tuple[CodecModel, dict[str, Any]]:
    reader = ByteReader(data, "checkpoint")
    reader.expect(MAGIC)
    (version,) = reader.unpack("H")
    if version != VERSION:
        raise reader.fail(f"unsupported version {version}", reader.offset - 2)
    (header_len,) = reader.unpack("I")
    header_at = reader.offset
    try:
        header = json.loads(reader.take(header_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError, ConfigError) as e:
        raise reader.fail(f"unreadable config header ({e})", header_at) from e

    model = CodecModel(config, seed=0)
    params = model.parameters()
    (count,) = reader.unpack("I")
    if count != len(params):
        raise reader.fail(f"{count} tensors stored, model has {len(params)}", reader.offset - 4)
    for index, p in enumerate(params):
        start = reader.offset
        (ndim,) = reader.unpack("B")
        shape = reader.unpack("I" * ndim)
        if tuple(shape) != p.data.shape:
            raise reader.fail(f"tensor {index} has shape {shape}, model expects {p.data.shape}", start)
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        p.data = values.astype(p.data.dtype)
    reader.finish()
    return model, dict(header.get("meta", {}))


def save_checkpoint(model: CodecModel, path: Union[str, Path], meta: Optional[dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model, meta))
    logger.debug(f"Wrote checkpoint {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> tuple[CodecModel, dict[str, Any]]:
    path = Path(path)
    model, meta = model_from_bytes(path.read_bytes())
    logger.info(f"Loaded checkpoint {path} ({model.parameter_count()} parameters)")
    return model, meta
