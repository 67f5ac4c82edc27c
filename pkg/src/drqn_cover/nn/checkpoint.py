"""Little-endian binary checkpoint format.

Layout::

    b"CBQN"                      magic
    u32 version                  currently 1
    u32 meta_len, meta_len bytes UTF-8 JSON metadata (variant, channel order, ...)
    u32 record_count
    record_count x:
        u32 name_len, name_len bytes UTF-8 name
        u32 rank, rank x u32 dims
        prod(dims) x f32 values, row-major
    u32 crc32 of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import ChecksumMismatchError

MAGIC = b"CBQN"
VERSION = 1


def dumps(arrays: dict[str, np.ndarray], metadata: dict | None = None) -> bytes:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ChecksumMismatchError("not a CBQN checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumMismatchError("checkpoint checksum mismatch")
    version, meta_len = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise ChecksumMismatchError(f"unsupported checkpoint version {version}")
    off = 12
    metadata = json.loads(body[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        arrays[name] = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(dims).copy()
        off += 4 * size
    return arrays, metadata


def save(path, arrays, metadata=None):
    Path(path).write_bytes(dumps(arrays, metadata))


def load(path):
    return loads(Path(path).read_bytes())
