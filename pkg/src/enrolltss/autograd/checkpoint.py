"""Checkpoint container.

Byte layout (all integers little-endian)::

    magic        8 bytes   b"ETSSCKPT"
    version      uint32    1
    meta_len     uint32    length of the metadata record
    metadata     meta_len  UTF-8 JSON object (model type, config, iteration, seed, ...)
    n_entries    uint32
    entries      n_entries times:
        name_len uint16, name (UTF-8, parameter path such as "sep.lstm.layers.0.w_ih")
        dtype    uint8     0 = float32, 1 = float64, 2 = int64
        ndim     uint8
        dims     ndim * uint32
        values   prod(dims) * itemsize bytes, little-endian, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError

MAGIC = b"ETSSCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def save_checkpoint(path, state: dict[str, np.ndarray], metadata: dict) -> None:
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(state))]
    for name, value in state.items():
        arr = np.asarray(value)
        if arr.dtype not in _CODES:
            arr = arr.astype(np.float64 if arr.dtype.kind == "f" else np.int64)
        code = _CODES[arr.dtype]
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    metadata = json.loads(buf[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    state: dict[str, np.ndarray] = {}
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        count = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
        pos += count * dtype.itemsize
    return state, metadata
