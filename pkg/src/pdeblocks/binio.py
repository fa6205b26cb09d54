"""Little-endian binary encoding with magic framing and CRC32 trailers.

Every on-disk artifact shares one frame: an 8-byte magic, a payload, and a
trailing CRC32 of the payload. Readers parse with bounds checks first (so a
short file reports truncation, not a checksum mismatch) and verify the CRC
once the payload has been consumed.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np

from .errors import DataFormatError

MAGIC_LEN = 8
_CRC_LEN = 4


class ByteWriter:
    """Accumulates little-endian fields into a payload."""

    def __init__(self) -> None:
        self._chunks: list[bytes] = []

    def raw(self, data: bytes) -> None:
        self._chunks.append(bytes(data))

    def u8(self, value: int) -> None:
        self._chunks.append(struct.pack("<B", value))

    def u16(self, value: int) -> None:
        self._chunks.append(struct.pack("<H", value))

    def u32(self, value: int) -> None:
        self._chunks.append(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self._chunks.append(struct.pack("<Q", value))

    def f64(self, value: float) -> None:
        self._chunks.append(struct.pack("<d", value))

    def f64_values(self, arr: np.ndarray) -> None:
        """Raw f64 data without a shape header."""
        self._chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def f64_array(self, arr: np.ndarray) -> None:
        """f64 tensor with a u32 ndim + u32-per-dim shape header."""
        arr = np.asarray(arr, dtype=np.float64)
        self.u32(arr.ndim)
        for dim in arr.shape:
            self.u32(dim)
        self.f64_values(arr)

    def string(self, text: str) -> None:
        data = text.encode("utf-8")
        self.u16(len(data))
        self.raw(data)

    def payload(self) -> bytes:
        return b"".join(self._chunks)


class ByteReader:
    """Bounds-checked little-endian reader over a payload."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise DataFormatError(
                f"truncated payload: needed {n} bytes at offset {self._pos}, "
                f"only {len(self._data) - self._pos} remain"
            )
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def f64_values(self, count: int) -> np.ndarray:
        data = self._take(8 * count)
        return np.frombuffer(data, dtype="<f8").astype(np.float64)

    def f64_array(self) -> np.ndarray:
        ndim = self.u32()
        if ndim > 8:
            raise DataFormatError(f"implausible tensor rank {ndim}")
        shape = tuple(self.u32() for _ in range(ndim))
        count = 1
        for dim in shape:
            count *= dim
        return self.f64_values(count).reshape(shape)

    def string(self) -> str:
        length = self.u16()
        try:
            return self._take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataFormatError(f"invalid UTF-8 in string field: {exc}") from exc

    def done(self) -> bool:
        return self._pos == len(self._data)


def write_framed(path, magic: bytes, payload: bytes) -> None:
    """Write magic + payload + CRC32(payload) atomically (tmp file + rename)."""
    if len(magic) != MAGIC_LEN:
        raise ValueError(f"magic must be {MAGIC_LEN} bytes, got {len(magic)}")
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(magic)
        fh.write(payload)
        fh.write(struct.pack("<I", crc))
    os.replace(tmp, path)


def read_framed(path, magic: bytes) -> tuple[bytes, int]:
    """Read and frame-check a file; returns (payload, stored_crc).

    The CRC is NOT verified here: callers parse the payload with a ByteReader
    (surfacing truncation as such) and then call verify_crc.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < MAGIC_LEN:
        raise DataFormatError(f"{path}: file too short to hold a magic header")
    found = data[:MAGIC_LEN]
    if found != magic:
        raise DataFormatError(
            f"{path}: bad magic {found!r}, expected {magic!r} (wrong or corrupt file type)"
        )
    if len(data) < MAGIC_LEN + _CRC_LEN:
        raise DataFormatError(f"{path}: truncated before the CRC trailer")
    payload = data[MAGIC_LEN:-_CRC_LEN]
    stored_crc = struct.unpack("<I", data[-_CRC_LEN:])[0]
    return payload, stored_crc


def verify_crc(payload: bytes, stored_crc: int, path) -> None:
    actual = zlib.crc32(payload) & 0xFFFFFFFF
    if actual != stored_crc:
        raise DataFormatError(
            f"{path}: checksum mismatch (stored {stored_crc:#010x}, "
            f"computed {actual:#010x}); file is corrupt"
        )


def file_crc(path, magic: bytes) -> int:
    """Stored CRC32 of a framed file, verified against its payload."""
    payload, stored = read_framed(path, magic)
    verify_crc(payload, stored, path)
    return stored
