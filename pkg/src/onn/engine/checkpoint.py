"""ONNW checkpoint files: named float32 tensors in a flat little-endian layout.

Layout (all integers little-endian u32)::

    b"ONNW" | version | count
    repeated count times:
        name_len | name (UTF-8) | rank | dim_0 .. dim_{rank-1} | float32 data (row-major)
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ONNW"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: dict[str, np.ndarray], path) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path} is not an ONNW checkpoint")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        pos = 12
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * size > len(buf):
                raise CheckpointError(f"{path}: truncated data for tensor {name!r}")
            arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(dims)
            out[name] = arr.astype(np.float32)
            pos += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes after the last tensor")
    return out


def parameter_checksum(params: dict[str, np.ndarray]) -> bytes:
    """SHA-256 over names, shapes and raw float32 bytes (32 bytes)."""
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        h.update(name.encode("utf-8"))
        h.update(struct.pack(f"<{arr.ndim}I", *arr.shape))
        h.update(arr.tobytes())
    return h.digest()
