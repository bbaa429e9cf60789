"""Single-file binary container for named arrays plus a JSON metadata block.

Layout (all integers little-endian):

    magic   4 bytes  b"SPAC"
    u32     container version (currently 1)
    u64     metadata length, then that many bytes of UTF-8 JSON
    u64     array count
    per array:
        u16  name length, then the UTF-8 name
        u16  dtype length, then the numpy dtype string (e.g. "<f4")
        u8   ndim
        u64  per dimension
        u64  payload byte count, then the raw C-order array bytes

Writes are atomic (temp file in the target directory, then rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"SPAC"
CONTAINER_VERSION = 1


def _le_dtype(arr: np.ndarray) -> np.dtype:
    dt = arr.dtype
    if dt.byteorder == ">":
        return dt.newbyteorder("<")
    return dt


def write_container(path, meta: dict, arrays: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", CONTAINER_VERSION))
            fh.write(struct.pack("<Q", len(meta_bytes)))
            fh.write(meta_bytes)
            fh.write(struct.pack("<Q", len(arrays)))
            for name, value in arrays.items():
                arr = np.asarray(value)
                if arr.ndim > 0:
                    # ascontiguousarray would promote 0-d scalars to 1-d
                    arr = np.ascontiguousarray(arr)
                arr = arr.astype(_le_dtype(arr), copy=False)
                name_bytes = name.encode("utf-8")
                dtype_bytes = arr.dtype.str.encode("ascii")
                fh.write(struct.pack("<H", len(name_bytes)))
                fh.write(name_bytes)
                fh.write(struct.pack("<H", len(dtype_bytes)))
                fh.write(dtype_bytes)
                fh.write(struct.pack("<B", arr.ndim))
                for dim in arr.shape:
                    fh.write(struct.pack("<Q", dim))
                payload = arr.tobytes()
                fh.write(struct.pack("<Q", len(payload)))
                fh.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated or corrupt container")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def read_container(path):
    """Read a container; returns (meta, arrays)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"file not found: {path}")
    reader = _Reader(path.read_bytes(), path)

    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not an array container")
    version = reader.unpack("<I")
    if version != CONTAINER_VERSION:
        raise CheckpointError(
            f"{path}: unsupported container version {version} "
            f"(expected {CONTAINER_VERSION})"
        )
    meta_len = reader.unpack("<Q")
    try:
        meta = json.loads(reader.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata block: {exc}") from exc

    arrays = {}
    count = reader.unpack("<Q")
    for _ in range(count):
        name = reader.take(reader.unpack("<H")).decode("utf-8")
        dtype_str = reader.take(reader.unpack("<H")).decode("ascii")
        try:
            dtype = np.dtype(dtype_str)
        except TypeError as exc:
            raise CheckpointError(f"{path}: bad dtype {dtype_str!r}") from exc
        ndim = reader.unpack("<B")
        shape = tuple(reader.unpack("<Q") for _ in range(ndim))
        nbytes = reader.unpack("<Q")
        expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        if ndim == 0:
            expected = dtype.itemsize
        if nbytes != expected:
            raise CheckpointError(
                f"{path}: array {name!r} payload size {nbytes} does not match "
                f"shape {shape} and dtype {dtype_str}"
            )
        arrays[name] = np.frombuffer(reader.take(nbytes), dtype=dtype).reshape(shape).copy()
    if reader.pos != len(reader.data):
        raise CheckpointError(f"{path}: trailing bytes after container payload")
    return meta, arrays
