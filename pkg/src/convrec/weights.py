"""Flat binary tensor container used by artifact save/load.

Layout (all integers little-endian):

    magic   4 bytes  "RWZW"
    version u32      currently 1
    count   u32      number of tensors
    per tensor:
        name_len u32, name bytes (UTF-8)
        dtype    u8   (0 = float32, the only supported dtype)
        rank     u8
        dims     rank x u64
        data     prod(dims) x 4 bytes, row-major float32

The format is deliberately dumb: byte-identical across platforms and
re-implementable in any language in an afternoon.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"RWZW"
FORMAT_VERSION = 1
DTYPE_F32 = 0


class WeightsFormatError(ValueError):
    pass


class BadMagicError(WeightsFormatError):
    pass


class UnsupportedVersionError(WeightsFormatError):
    pass


class TruncatedFileError(WeightsFormatError):
    pass


@dataclass
class WeightsFile:
    """Named float32 tensors; names unique, insertion order preserved."""

    tensors: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        clean: dict[str, np.ndarray] = {}
        for name, arr in self.tensors.items():
            clean[name] = np.asarray(arr, dtype=np.float32)  # 0-d stays 0-d
        self.tensors = clean

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WeightsFile):
            return NotImplemented
        if list(self.tensors) != list(other.tensors):
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b, equal_nan=True)
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


def serialize_weights(w: WeightsFile) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<I", len(w.tensors))
    for name, arr in w.tensors.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<BB", DTYPE_F32, arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<Q", dim)
        out += arr.astype("<f4", copy=False).tobytes(order="C")
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"need {n} bytes at offset {self.pos}, only {len(self.data) - self.pos} left"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def deserialize_weights(data: bytes) -> WeightsFile:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagicError("not a weights file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported weights format version {version}")
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8")
        dtype = r.u8()
        if dtype != DTYPE_F32:
            raise WeightsFormatError(f"unsupported dtype code {dtype}")
        rank = r.u8()
        shape = tuple(r.u64() for _ in range(rank))
        n_elems = 1
        for dim in shape:
            n_elems *= dim
        raw = r.take(4 * n_elems)
        if name in tensors:
            raise WeightsFormatError(f"duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return WeightsFile(tensors)
