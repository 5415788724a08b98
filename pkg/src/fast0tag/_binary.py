"""Little-endian binary helpers shared by the feature and model file formats."""

import struct

import numpy as np

from fast0tag.errors import DataError


class Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.what}: truncated binary file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).astype(np.float64)

    def strings(self) -> list[str]:
        n = self.u32()
        out = []
        for _ in range(n):
            raw = self.take(self.u16())
            try:
                out.append(raw.decode("utf-8"))
            except UnicodeDecodeError:
                raise DataError(f"{self.what}: id is not valid UTF-8") from None
        return out

    def finish(self):
        if self.pos != len(self.data):
            raise DataError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


def u16(v: int) -> bytes:
    return struct.pack("<H", v)


def u32(v: int) -> bytes:
    return struct.pack("<I", v)


def f64(v: float) -> bytes:
    return struct.pack("<d", v)


def strings(items) -> bytes:
    parts = [u32(len(items))]
    for s in items:
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"id too long for binary format: {s[:40]!r}...")
        parts.append(u16(len(raw)))
        parts.append(raw)
    return b"".join(parts)
