"""Named-tensor checkpoint container.

Layout (little-endian)::

    magic "MNCKPT\\0\\1" | version u16 | meta_len u32 | meta JSON (utf-8)
    n_tensors u32
    per tensor: name_len u16 | name | ndim u8 | dims u32*ndim | float64 data
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from memnav.errors import FormatError

MAGIC = b"MNCKPT\x00\x01"
VERSION = 1


def encode(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(raw: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if raw[:8] != MAGIC:
        raise FormatError("not a memnav checkpoint")
    version, meta_len = struct.unpack_from("<HI", raw, 8)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 14
    meta = json.loads(raw[pos:pos + meta_len].decode())
    pos += meta_len
    (n,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    out = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + ln].decode()
        pos += ln
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if pos + 8 * count > len(raw):
            raise FormatError(f"truncated tensor {name!r}")
        out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
    if pos != len(raw):
        raise FormatError("trailing bytes after last tensor")
    return out, meta


def save(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> str:
    raw = encode(tensors, meta)
    Path(path).write_bytes(raw)
    return hashlib.sha256(raw).hexdigest()


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
