"""
Binary checkpoint container.

Layout (little-endian):
    magic b"WLFT", u32 format version, u32 record count
    per record: u16 name length, UTF-8 name, u8 rank, rank x u32 dims, float32 data
    trailer: u32 length, UTF-8 JSON metadata (sorted keys)

Records are the model parameters in registry order, then batchnorm running
statistics under "buffer:" and SGD momentum buffers under "momentum:".
Writing the same content twice gives byte-identical files.
"""

import json
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from autograd import Module
from errors import CheckpointError

MAGIC = b"WLFT"
FORMAT_VERSION = 1
BUFFER_PREFIX = "buffer:"
MOMENTUM_PREFIX = "momentum:"


class CheckpointMeta(BaseModel):
    """Metadata trailer of a checkpoint."""
    epoch: int = Field(ge=0, description="Completed epochs")
    seed: int = Field(default=0)
    best_val_acc: Optional[float] = Field(default=None)
    config: Dict[str, str] = Field(default_factory=dict, description="Flat resolved run config")
    notes: Dict[str, Any] = Field(default_factory=dict)


class Checkpoint:
    def __init__(self, records: "OrderedDict[str, np.ndarray]", meta: CheckpointMeta):
        self.records = records
        self.meta = meta

    def parameters(self) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self.records.items() if not k.startswith((BUFFER_PREFIX, MOMENTUM_PREFIX))}


def snapshot(model: Module, meta: CheckpointMeta) -> Checkpoint:
    records: "OrderedDict[str, np.ndarray]" = OrderedDict()
    named = list(model.named_parameters())
    for name, param in named:
        records[name] = param.data
    for name, buf in model.named_buffers():
        records[BUFFER_PREFIX + name] = buf
    for name, param in named:
        records[MOMENTUM_PREFIX + name] = param.momentum_buffer
    return Checkpoint(records, meta)


def _encode(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(checkpoint.records))]
    for name, array in checkpoint.records.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    meta = json.dumps(checkpoint.meta.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta)))
    parts.append(meta)
    return b"".join(parts)


def write_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(_encode(checkpoint))
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    return path


def save_checkpoint(path: Union[str, Path], model: Module, meta: CheckpointMeta) -> Path:
    return write_checkpoint(path, snapshot(model, meta))


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointError(f"truncated checkpoint {self.path} at byte {self.offset}")
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read and validate a checkpoint file.

    Raises:
        CheckpointError: missing file, bad magic, unsupported version, truncation,
            trailing bytes or unreadable metadata
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    reader = _Reader(data, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a wlft checkpoint (bad magic)")
    version, count = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path} has format version {version}, expected {FORMAT_VERSION}")

    records: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        records[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).copy()

    (meta_length,) = reader.unpack("<I")
    try:
        meta = CheckpointMeta.model_validate(json.loads(reader.take(meta_length).decode("utf-8")))
    except ValueError as e:
        raise CheckpointError(f"{path} has unreadable metadata: {e}") from e
    if reader.offset != len(data):
        raise CheckpointError(f"{path} has {len(data) - reader.offset} trailing bytes")
    return Checkpoint(records, meta)


def verify_compatible(model: Module, checkpoint: Checkpoint) -> List[str]:
    """
    Every name/shape disagreement between the model and the checkpoint.

    Raises:
        CheckpointError: listing all mismatches, if there are any
    """
    expected = snapshot(model, CheckpointMeta(epoch=0)).records
    mismatches = []
    for name, array in expected.items():
        if name not in checkpoint.records:
            mismatches.append(f"{name}: missing from checkpoint")
        elif checkpoint.records[name].shape != array.shape:
            mismatches.append(f"{name}: checkpoint shape {checkpoint.records[name].shape}, model shape {array.shape}")
    for name in checkpoint.records:
        if name not in expected:
            mismatches.append(f"{name}: not present in the model")
    if mismatches:
        raise CheckpointError(
            f"checkpoint does not match the model ({len(mismatches)} mismatches): " + "; ".join(mismatches),
            mismatches=mismatches,
        )
    return mismatches


def restore(model: Module, checkpoint: Checkpoint):
    """Copy parameters, running statistics and momentum buffers into the model in place."""
    verify_compatible(model, checkpoint)
    records = checkpoint.records
    for name, param in model.named_parameters():
        param.data[...] = records[name]
        param.momentum_buffer[...] = records[MOMENTUM_PREFIX + name]
    for name, buf in model.named_buffers():
        buf[...] = records[BUFFER_PREFIX + name]
