"""Little-endian framing shared by the MOEQ1 / MOEQZ1 / CALQ1 / BSPQ1 containers."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import List

import numpy as np

from core.errors import ContainerFormatError


class ByteWriter:
    def __init__(self, magic: bytes) -> None:
        self._parts: List[bytes] = [magic]

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def f64(self, v: float) -> None:
        self._parts.append(struct.pack("<d", v))

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self._parts.append(raw)

    def raw(self, b: bytes) -> None:
        self.u32(len(b))
        self._parts.append(b)

    def f64_array(self, a: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def matrix(self, a: np.ndarray) -> None:
        rows, cols = a.shape
        self.u32(rows)
        self.u32(cols)
        self.f64_array(a)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    def __init__(self, data: bytes, magic: bytes, *, what: str) -> None:
        self._data = data
        self._what = what
        if not data.startswith(magic):
            raise ContainerFormatError.build(
                f"not a {what} container (bad magic)",
                details={"expected": magic.decode("ascii"), "found": data[: len(magic)].hex()},
            )
        self._pos = len(magic)

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if n < 0 or end > len(self._data):
            raise ContainerFormatError.build(
                f"truncated {self._what} container",
                details={"offset": self._pos, "wanted": n, "size": len(self._data)},
            )
        chunk = self._data[self._pos : end]
        self._pos = end
        return chunk

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        n = self.u32()
        try:
            return self._take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ContainerFormatError.build(f"corrupt text field in {self._what} container") from e

    def raw(self) -> bytes:
        return self._take(self.u32())

    def f64_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self._take(8 * n), dtype="<f8").astype(np.float64)

    def matrix(self) -> np.ndarray:
        rows = self.u32()
        cols = self.u32()
        return self.f64_array(rows * cols).reshape(rows, cols)

    def done(self) -> None:
        if self._pos != len(self._data):
            raise ContainerFormatError.build(
                f"trailing bytes after {self._what} container",
                details={"offset": self._pos, "size": len(self._data)},
            )


def write_bytes(path: str | Path, data: bytes) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(data)
    return p


def read_bytes(path: str | Path, *, what: str) -> bytes:
    p = Path(path)
    if not p.exists():
        raise ContainerFormatError.build(f"{what} file not found: {p}", hint="check the path argument")
    return p.read_bytes()
