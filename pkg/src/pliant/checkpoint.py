"""Versioned binary container for named weight tensors.

Layout (all integers little-endian):

    magic  b"PLNT"
    u32    format version (currently 1)
    u32    metadata length, then that many bytes of UTF-8 JSON
    u32    tensor count
    per tensor:
        u16  name length, then that many bytes of UTF-8 name
        u8   dtype tag (0 = float32, 1 = float64)
        u8   rank
        u32  * rank dims
        raw  little-endian element data

Round-trips are bit-exact; truncation or garbage raises CorruptFile with the
offending byte offset.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptFile, VersionMismatch

MAGIC = b"PLNT"
VERSION = 1

_DTYPE_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            raise ValueError(f"unsupported checkpoint dtype {arr.dtype} for '{name}'")
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<H", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob += np.ascontiguousarray(le).tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptFile("unexpected end of checkpoint", offset=self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CorruptFile("bad magic", offset=0)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptFile(f"bad metadata: {e}", offset=12) from e
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tag, rank = r.unpack("<BB")
        if tag not in _TAG_DTYPES:
            raise CorruptFile(f"unknown dtype tag {tag} for '{name}'", offset=r.pos - 2)
        dims = r.unpack(f"<{rank}I")
        dtype = _TAG_DTYPES[tag]
        n_elems = int(np.prod(dims, dtype=np.int64))  # == 1 for rank 0
        raw = r.take(n_elems * dtype.itemsize)
        arr = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
        tensors[name] = arr
    if r.pos != len(r.buf):
        raise CorruptFile("trailing bytes after last tensor", offset=r.pos)
    return tensors, meta
