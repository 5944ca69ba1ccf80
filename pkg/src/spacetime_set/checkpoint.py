"""Named-array binary container ("SETT").

Layout, all integers little-endian::

    b"SETT" | version u32 | count u32
    per array: name_len u32 | name utf-8 | rank u32 | extents u64[rank] | payload f64[prod]
    meta_len u64 | meta JSON utf-8      (meta_len may be 0)
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SETT"
VERSION = 1


class FormatError(ValueError):
    """The file is not a readable container of the expected kind or version."""


def dumps(arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    blob = json.dumps(meta, sort_keys=True).encode("utf-8") if meta is not None else b""
    buf.write(struct.pack("<Q", len(blob)))
    buf.write(blob)
    return buf.getvalue()


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict | None]:
    reader = _Reader(data)
    if reader.take(4) != MAGIC:
        raise FormatError("bad magic bytes: not a SETT container")
    version, count = reader.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported SETT version {version} (expected {VERSION})")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(reader.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    (meta_len,) = reader.unpack("<Q")
    meta = json.loads(reader.take(meta_len).decode("utf-8")) if meta_len else None
    return arrays, meta


def save(path: str | Path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps(arrays, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict | None]:
    return loads(Path(path).read_bytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated payload at byte {self.pos} (wanted {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))
