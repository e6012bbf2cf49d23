"""Versioned checkpoint container.

Layout: 8-byte magic, little-endian uint32 format version, uint32 header
length, UTF-8 JSON header, then the raw little-endian tensor payload. The
header lists every tensor's name, dtype, shape, offset and byte size and
carries the model config.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"HMCKPT\x00\x01"
VERSION = 1
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


class CheckpointError(ValueError):
    pass


def dump_bytes(tensors: dict[str, torch.Tensor], config: dict) -> bytes:
    entries, chunks, offset = [], [], 0
    for name in sorted(tensors):
        t = tensors[name].detach().cpu()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        dt = _DTYPES[t.dtype]
        data = t.contiguous().numpy().astype(dt, copy=False).tobytes()
        entries.append({"name": name, "dtype": dt, "shape": list(t.shape), "offset": offset,
                        "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    header = json.dumps({"version": VERSION, "config": config, "tensors": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<II", VERSION, len(header)) + header + b"".join(chunks)


def save(path, tensors: dict[str, torch.Tensor], config: dict) -> str:
    """Write a checkpoint and return its sha256 hex digest."""
    blob = dump_bytes(tensors, config)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load(path) -> tuple[dict[str, torch.Tensor], dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen])
    base = 16 + hlen
    tensors = {}
    for e in header["tensors"]:
        raw = blob[base + e["offset"]: base + e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=e["dtype"]).reshape(e["shape"]).copy()
        tensors[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("=")))
    return tensors, header["config"]


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
