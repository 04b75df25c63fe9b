"""Little-endian binary helpers shared by memory and checkpoint files."""

from __future__ import annotations

import struct

import numpy as np


class CheckpointError(Exception):
    """Malformed, truncated or incompatible binary file."""


class Writer:
    def __init__(self) -> None:
        self.buf = bytearray()

    def u8(self, v: int) -> None:
        self.buf += struct.pack("<B", v)

    def u32(self, v: int) -> None:
        self.buf += struct.pack("<I", v)

    def i64(self, v: int) -> None:
        self.buf += struct.pack("<q", v)

    def f64(self, v: float) -> None:
        self.buf += struct.pack("<d", v)

    def raw(self, b: bytes) -> None:
        self.buf += b

    def string(self, s: str) -> None:
        data = s.encode("utf-8")
        self.u32(len(data))
        self.buf += data

    def array(self, a: np.ndarray, dtype: str) -> None:
        self.buf += np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


class Reader:
    def __init__(self, data: bytes, offset: int = 0) -> None:
        self.data = data
        self.pos = offset

    def _take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise CheckpointError(
                f"truncated file: needed {n} bytes for {what} at byte offset {self.pos}, "
                f"only {len(self.data) - self.pos} available"
            )
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def u8(self, what: str = "u8") -> int:
        return struct.unpack("<B", self._take(1, what))[0]

    def u32(self, what: str = "u32") -> int:
        return struct.unpack("<I", self._take(4, what))[0]

    def i64(self, what: str = "i64") -> int:
        return struct.unpack("<q", self._take(8, what))[0]

    def f64(self, what: str = "f64") -> float:
        return struct.unpack("<d", self._take(8, what))[0]

    def raw(self, n: int, what: str = "bytes") -> bytes:
        return self._take(n, what)

    def string(self, what: str = "string") -> str:
        n = self.u32(what + " length")
        return self._take(n, what).decode("utf-8")

    def array(self, shape: tuple[int, ...], dtype: str, what: str = "array") -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        chunk = self._take(count * dt.itemsize, what)
        return np.frombuffer(chunk, dtype=dt).astype(np.dtype(dtype)).reshape(shape)

    def at_end(self) -> bool:
        return self.pos == len(self.data)
