"""Checkpoint file format.

Layout: 9-byte magic, little-endian uint32 header length, UTF-8 JSON
header (model config, input length, named tensor shapes), then every
state tensor as little-endian float32 in declared layer order. A loaded
model reproduces the saved model's eval-mode outputs bit for bit.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import Model, ModelConfig, build_model

MAGIC = b"APNEACNN1"


class CheckpointError(Exception):
    pass


class MagicMismatch(CheckpointError):
    pass


class ArchitectureMismatch(CheckpointError):
    pass


def save_checkpoint(model: Model, path) -> None:
    entries = model.state_items()
    header = {
        "config": model.config.to_dict(),
        "input_length": model.input_length,
        "tensors": [{"name": name, "shape": list(value.shape)} for name, value in entries],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for _, value in entries:
            f.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(path) -> Model:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise MagicMismatch(f"bad magic {data[: len(MAGIC)]!r}")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchitectureMismatch(f"unreadable header: {exc}") from exc
    offset += header_len

    config = ModelConfig.from_dict(header["config"])
    model = build_model(config, input_length=header["input_length"], dtype=np.float32)
    entries = model.state_items()

    declared = [(t["name"], tuple(t["shape"])) for t in header["tensors"]]
    actual = [(name, value.shape) for name, value in entries]
    if declared != actual:
        raise ArchitectureMismatch(
            "tensor list in header does not match the architecture it declares"
        )
    payload = len(data) - offset
    expected = sum(value.size for _, value in entries) * 4
    if payload != expected:
        raise ArchitectureMismatch(
            f"parameter payload is {payload} bytes, architecture needs {expected}"
        )
    for _, value in entries:
        n = value.size * 4
        loaded = np.frombuffer(data, dtype="<f4", count=value.size, offset=offset)
        value[...] = loaded.reshape(value.shape)
        offset += n
    return model
