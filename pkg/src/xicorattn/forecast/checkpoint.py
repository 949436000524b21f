"""Flat binary checkpoints.

Layout (little-endian)::

    magic      8 bytes   b"XICORCKP"
    version    uint32
    meta_len   uint32, then meta_len bytes of UTF-8 JSON (model configs)
    n_tensors  uint32
    n_tensors x { name_len uint16, name bytes, ndim uint8, ndim x uint64 dims }
    payload    float64 values of every tensor, row-major, in table order
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..attention import AttentionConfig
from ..errors import ParseError
from .model import ForecastModel, ModelConfig
from .patching import PatchConfig

MAGIC = b"XICORCKP"
VERSION = 1


def save_checkpoint(model: ForecastModel, path) -> None:
    meta = {
        "attention": asdict(model.attn_cfg),
        "patch": asdict(model.patch_cfg),
        "model": asdict(model.model_cfg),
        "n_vars": model.n_vars,
        "seed": model.seed,
    }
    state = model.state_dict()
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_blob)), meta_blob, struct.pack("<I", len(state))]
    for name, arr in state.items():
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    for arr in state.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(buf[off:off + meta_len].decode())
    off += meta_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, off)
        off += 8 * ndim
        table.append((name, shape))
    state = {}
    for name, shape in table:
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(buf):
        raise ParseError(f"{path}: {len(buf) - off} trailing bytes after payload")
    return meta, state


def load_checkpoint(path) -> ForecastModel:
    meta, state = read_checkpoint(path)
    model = ForecastModel(AttentionConfig(**meta["attention"]), PatchConfig(**meta["patch"]),
                          ModelConfig(**meta["model"]), n_vars=meta["n_vars"], seed=meta["seed"])
    model.load_state_dict(state)
    return model
