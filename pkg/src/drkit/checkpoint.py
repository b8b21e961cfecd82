"""Checkpoint files: magic, JSON header, then one tensor blob per parameter."""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

from .errors import DataError
from .layers import ModelParams
from .tensor import read_tensor, write_tensor

MAGIC = b"DRKCKPT1"


def checkpoint_bytes(params: ModelParams, header: dict) -> bytes:
    head = dict(header)
    head["entries"] = params.names()
    text = json.dumps(head, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(text)))
    buf.write(text)
    for name in head["entries"]:
        write_tensor(buf, params.value(name))
    return buf.getvalue()


def save_checkpoint(path, params: ModelParams, header: dict) -> str:
    """Write a checkpoint and return its sha256."""
    data = checkpoint_bytes(params, header)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    buf = io.BytesIO(data)
    buf.seek(len(MAGIC))
    (n,) = struct.unpack("<Q", buf.read(8))
    try:
        header = json.loads(buf.read(n))
    except ValueError as exc:
        raise DataError(f"{path}: corrupt checkpoint header") from exc
    params = ModelParams()
    for name in header["entries"]:
        params.add(name, read_tensor(buf))
    return params, header


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
