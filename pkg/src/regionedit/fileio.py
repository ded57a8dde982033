"""Little-endian binary containers and atomic file writes.

All binary files share one frame: a 4-byte magic, a payload, and a trailing
u32 CRC32 of the payload (the bytes between magic and checksum).
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """A file failed structural validation."""


def atomic_write(path, data: bytes):
    """Write via a temp file in the target directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write(path, text.encode("utf-8"))


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def u32(self, *vals):
        self._parts.append(struct.pack(f"<{len(vals)}I", *vals))

    def u64(self, *vals):
        self._parts.append(struct.pack(f"<{len(vals)}Q", *vals))

    def f64(self, arr):
        self._parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def tensor(self, arr):
        arr = np.asarray(arr, dtype=np.float64)
        self.u32(arr.ndim, *arr.shape)
        self.f64(arr)

    def framed(self, magic: bytes) -> bytes:
        payload = b"".join(self._parts)
        return magic + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


class Reader:
    """Sequential reader over a validated payload; offsets in errors are file offsets."""

    def __init__(self, data: bytes, magic: bytes, what: str = "file"):
        self.what = what
        if len(data) < len(magic) + 4:
            raise FormatError(f"{what}: truncated, expected at least {len(magic) + 4} bytes, got {len(data)}")
        if data[: len(magic)] != magic:
            raise FormatError(f"{what}: bad magic {data[:len(magic)]!r}, expected {magic!r}")
        self.data = data
        self.pos = len(magic)
        self.end = len(data) - 4
        (self.stored_crc,) = struct.unpack_from("<I", data, self.end)
        self.actual_crc = zlib.crc32(data[len(magic):self.end]) & 0xFFFFFFFF

    def fail(self, msg: str):
        """Raise a structural error; flags it when the checksum also disagrees."""
        if self.stored_crc != self.actual_crc:
            msg += f" (checksum mismatch: stored {self.stored_crc:08x}, computed {self.actual_crc:08x})"
        raise FormatError(f"{self.what}: {msg}")

    def need(self, n: int, field: str):
        if self.pos + n > self.end:
            self.fail(f"truncated while reading {field}: expected {self.pos + n + 4} bytes, got {len(self.data)}")

    def u32(self, field: str, n: int = 1):
        self.need(4 * n, field)
        vals = struct.unpack_from(f"<{n}I", self.data, self.pos)
        self.pos += 4 * n
        return vals[0] if n == 1 else list(vals)

    def u64(self, field: str):
        self.need(8, field)
        (val,) = struct.unpack_from("<Q", self.data, self.pos)
        self.pos += 8
        return val

    def f64(self, shape, field: str) -> np.ndarray:
        shape = tuple(int(s) for s in shape)
        n = int(np.prod(shape)) if shape else 1
        self.need(8 * n, field)
        arr = np.frombuffer(self.data, dtype="<f8", count=n, offset=self.pos).astype(np.float64)
        self.pos += 8 * n
        return arr.reshape(shape)

    def tensor(self, field: str) -> np.ndarray:
        rank = self.u32(f"{field}.rank")
        if rank > 8:
            self.fail(f"{field} has implausible rank {rank}")
        dims = [self.u32(f"{field}.dims")] if rank == 1 else (self.u32(f"{field}.dims", rank) if rank else [])
        return self.f64(dims, field)

    def finish(self):
        if self.pos != self.end:
            self.fail(f"size mismatch, expected {self.pos + 4} bytes, got {len(self.data)}")
        if self.stored_crc != self.actual_crc:
            raise FormatError(f"{self.what}: checksum mismatch (stored {self.stored_crc:08x}, "
                              f"computed {self.actual_crc:08x})")
