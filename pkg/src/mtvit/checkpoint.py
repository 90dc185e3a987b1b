"""Parameter checkpoints.

Layout (little-endian): magic ``MTVT``, version u32, record count u32, then per
record: name length u32, UTF-8 name, rank u32, extents u32[rank], f32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MTVT"
VERSION = 1


def encode(arrays: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<2I", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<2I", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off : off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        size = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(buf):
        raise ValueError(f"trailing bytes in checkpoint ({len(buf) - off})")
    return out


def save(arrays: Mapping[str, np.ndarray], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(arrays))
    return path


def load(path: str | Path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def state_of(model) -> dict[str, np.ndarray]:
    return {k: v.data for k, v in model.named_parameters().items()}


def restore(model, arrays: Mapping[str, np.ndarray], strict: bool = False) -> list[str]:
    """Copy matching arrays into ``model``; returns names that were missing."""
    params = model.named_parameters()
    missing = [k for k in params if k not in arrays]
    if strict and missing:
        raise KeyError(f"checkpoint lacks {missing}")
    for k, p in params.items():
        if k in arrays:
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != model shape {p.shape}")
            p.data[...] = arrays[k].astype(p.dtype)
    return missing
