"""Flat binary checkpoint container for model weights.

Layout (all integers unsigned 32-bit little-endian):

    magic "FTCP" | version | config length | config JSON |
    tensor count | per tensor: name length | name (utf-8) | rank |
    extents... | float32 little-endian values (row-major)

Values are stored as 32-bit floats; a float32 model round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .model import CapsNetConfig, CapsNetModel
from .tensor import Tensor

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointError", "MAGIC", "VERSION"]

MAGIC = b"FTCP"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or truncated checkpoint file."""


def _config_to_json(config: CapsNetConfig) -> bytes:
    d = dict(config.__dict__)
    d["decoder_hidden"] = list(d["decoder_hidden"])
    return json.dumps(d, sort_keys=True).encode("utf-8")


def _config_from_json(blob: bytes) -> CapsNetConfig:
    d = json.loads(blob.decode("utf-8"))
    d["decoder_hidden"] = tuple(d["decoder_hidden"])
    return CapsNetConfig(**d)


def save_checkpoint(path, model: CapsNetModel) -> None:
    """Write model config and all named tensors to ``path``."""
    params = model.named_parameters()
    config_blob = _config_to_json(model.config)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = params[name].data
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> CapsNetModel:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint file")
    version = reader.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = _config_from_json(reader.take(reader.u32()))
    count = reader.u32()
    params = {}
    for _ in range(count):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        n_values = int(np.prod(shape)) if rank else 1
        raw = reader.take(4 * n_values)
        params[name] = Tensor(np.frombuffer(raw, dtype="<f4").reshape(shape).copy())
    if reader.pos != len(reader.blob):
        raise CheckpointError("trailing bytes after last tensor")
    return CapsNetModel(config, params)
