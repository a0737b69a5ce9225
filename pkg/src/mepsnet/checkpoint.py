"""Binary checkpoint format.

Layout (little-endian)::

    b"MEPS" | u32 version | u32 json_len | json (UTF-8) | u32 n_tensors
    per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 data[prod(dims)]

The JSON block carries the model config plus free-form metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MEPS"
VERSION = 1


def save_tensors(path: Path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_tensors(path: Path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: not a MEPS checkpoint")
    version, n = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    meta = json.loads(buf[off:off + n].decode("utf-8"))
    off += n
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + ln].decode("utf-8")
        off += ln
        (rank,) = struct.unpack_from("<B", buf, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(dims).astype(np.float32)
        off += 4 * size
    return tensors, meta


def save_model(path: Path, model, **meta) -> None:
    save_tensors(path, model.state_dict(), {"config": model.config.to_dict(), **meta})


def load_model(path: Path, dtype=np.float32):
    from .model import MepsNet, MepsNetConfig

    tensors, meta = load_tensors(path)
    model = MepsNet(MepsNetConfig.from_dict(meta["config"]), dtype=dtype)
    model.load_state_dict(tensors)
    return model, meta


def serialized_value_count(path: Path) -> int:
    tensors, _ = load_tensors(path)
    return sum(t.size for t in tensors.values())
