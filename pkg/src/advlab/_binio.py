"""Helpers for the package's little binary file formats.

Every format is: magic bytes, u32 version, then format-specific fields.
Numbers are little-endian; arrays are packed float64/int64 bytes, so all
round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError


class Writer:
    def __init__(self, fh, magic: bytes, version: int):
        self.fh = fh
        fh.write(magic)
        self.u32(version)

    def u8(self, v):
        self.fh.write(struct.pack("<B", v))

    def u32(self, v):
        self.fh.write(struct.pack("<I", v))

    def i64(self, v):
        self.fh.write(struct.pack("<q", v))

    def f64(self, v):
        self.fh.write(struct.pack("<d", v))

    def text(self, s: str):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.fh.write(raw)

    def array(self, arr: np.ndarray, dtype):
        arr = np.ascontiguousarray(arr, dtype=dtype)
        self.u32(arr.ndim)
        for d in arr.shape:
            self.u32(d)
        self.fh.write(arr.astype(np.dtype(dtype).newbyteorder("<")).tobytes())


class Reader:
    def __init__(self, fh, magic: bytes, version: int, what: str):
        self.fh = fh
        self.what = what
        got = fh.read(len(magic))
        if got != magic:
            raise FormatError(f"{what}: bad magic bytes {got!r}")
        ver = self.u32()
        if ver != version:
            raise FormatError(f"{what}: unsupported version {ver} "
                              f"(expected {version})")

    def _read(self, n):
        raw = self.fh.read(n)
        if len(raw) != n:
            raise FormatError(f"{self.what}: truncated file")
        return raw

    def u8(self):
        return struct.unpack("<B", self._read(1))[0]

    def u32(self):
        return struct.unpack("<I", self._read(4))[0]

    def i64(self):
        return struct.unpack("<q", self._read(8))[0]

    def f64(self):
        return struct.unpack("<d", self._read(8))[0]

    def text(self):
        return self._read(self.u32()).decode("utf-8")

    def array(self, dtype) -> np.ndarray:
        ndim = self.u32()
        shape = tuple(self.u32() for _ in range(ndim))
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape)) if shape else 1
        raw = self._read(count * dt.itemsize)
        arr = np.frombuffer(raw, dtype=dt).astype(dtype).reshape(shape)
        return np.ascontiguousarray(arr)
