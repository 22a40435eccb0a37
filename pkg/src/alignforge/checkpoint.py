"""Self-describing binary checkpoints with bit-exact round trips."""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .tinylm import LMConfig, LMParams

MAGIC = b"AFORGE-CKPT\x00"
VERSION = 1
_DIGEST_BYTES = 32


class CheckpointError(RuntimeError):
    """Raised for unreadable, corrupt, or incompatible checkpoint files."""


def save_checkpoint(params: LMParams, path: str | Path) -> None:
    """Write params to ``path``. Tensor bytes are float64 little-endian."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    config_blob = json.dumps(asdict(params.config), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(config_blob)))
    buf.write(config_blob)
    names = sorted(params.tensors)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        tensor = params.tensors[name].detach().cpu().contiguous()
        raw = tensor.numpy().astype("<f8", copy=False).tobytes()
        name_blob = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_blob)))
        buf.write(name_blob)
        buf.write(struct.pack("<B", tensor.dim()))
        for dim in tensor.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fp:
        fp.write(payload)
        fp.write(digest)


def load_checkpoint(path: str | Path) -> LMParams:
    """Read a checkpoint; tensors come back bit-identical and ready for gradients."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + _DIGEST_BYTES:
        raise CheckpointError("corrupt checkpoint: file too short")
    payload, digest = data[:-_DIGEST_BYTES], data[-_DIGEST_BYTES:]
    if not payload.startswith(MAGIC):
        raise CheckpointError("corrupt checkpoint: bad magic string")
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("corrupt checkpoint: checksum mismatch")
    try:
        offset = len(MAGIC)
        (version,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
        (config_len,) = struct.unpack_from("<Q", payload, offset)
        offset += 8
        config = LMConfig(**json.loads(payload[offset : offset + config_len].decode("utf-8")))
        offset += config_len
        (n_tensors,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        tensors: dict[str, torch.Tensor] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = []
            for _ in range(ndim):
                (dim,) = struct.unpack_from("<Q", payload, offset)
                offset += 8
                shape.append(dim)
            (raw_len,) = struct.unpack_from("<Q", payload, offset)
            offset += 8
            raw = payload[offset : offset + raw_len]
            offset += raw_len
            array = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
            tensors[name] = torch.from_numpy(array).requires_grad_(True)
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
    return LMParams(config=config, tensors=tensors)
