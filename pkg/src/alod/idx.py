"""Parser for the IDX binary container used by the classic glyph datasets.

Layout (big endian): two zero bytes, a dtype byte, a dimension-count byte,
one uint32 per dimension, then the row-major payload.
"""

from __future__ import annotations

import struct

import numpy as np

_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


class IdxParseError(ValueError):
    """Malformed IDX data; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def parse_idx(data: bytes) -> np.ndarray:
    """Decode one IDX tensor from raw bytes."""
    if len(data) < 4:
        raise IdxParseError("truncated header, need 4 magic bytes", len(data))
    if data[0] != 0 or data[1] != 0:
        raise IdxParseError(f"bad magic bytes {data[0]:#04x} {data[1]:#04x}", 0)
    type_byte = data[2]
    if type_byte not in _DTYPES:
        raise IdxParseError(f"unknown dtype byte {type_byte:#04x}", 2)
    ndim = data[3]
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise IdxParseError(f"truncated header, need {ndim} dimension sizes", len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    dtype = _DTYPES[type_byte]
    count = 1
    for d in dims:
        count *= d
    expected = header_end + count * dtype.itemsize
    if len(data) < expected:
        raise IdxParseError(
            f"truncated payload, expected {expected} bytes, got {len(data)}", len(data)
        )
    if len(data) > expected:
        raise IdxParseError(f"trailing bytes after payload of {expected} bytes", expected)
    flat = np.frombuffer(data, dtype=dtype, count=count, offset=header_end)
    return flat.reshape(dims).astype(dtype.newbyteorder("="))


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_idx(fh.read())
