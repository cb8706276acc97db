"""Standalone writer for the cnnbtrk binary model format.

Deliberately does not import the consumer package: the byte layout is the
contract, and an independent writer keeps the round-trip test meaningful.
Layout (little-endian): magic "CNNBTRK1", u32 version=1, u32 descriptor
length, UTF-8 JSON descriptor, raw float32 payload, trailing u64 FNV-1a
checksum over everything before it.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"CNNBTRK1"
VERSION = 1

_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def _fnv1a_update_py(chunk: bytes, h: int) -> int:
    prime = 0x100000001B3
    for b in chunk:
        h = ((h ^ b) * prime) & 0xFFFFFFFFFFFFFFFF
    return h


try:
    import numba as _numba

    @_numba.njit(cache=False)
    def _fnv1a_update_jit(arr, h):  # pragma: no cover - exercised via fnv1a_update
        for i in range(arr.size):
            h = (h ^ np.uint64(arr[i])) * _FNV_PRIME
        return h

    def fnv1a_update(chunk: bytes, h: int) -> int:
        return int(_fnv1a_update_jit(np.frombuffer(chunk, dtype=np.uint8), np.uint64(h)))

except ImportError:  # pragma: no cover
    fnv1a_update = _fnv1a_update_py


def write_model(path, descriptor: dict, arrays) -> None:
    """Stream descriptor + payload arrays to disk, appending the checksum."""
    desc = json.dumps(descriptor, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = MAGIC + struct.pack("<II", VERSION, len(desc))
    h = int(_FNV_OFFSET)
    with open(path, "wb") as f:
        for chunk in (header, desc):
            f.write(chunk)
            h = fnv1a_update(chunk, h)
        for arr in arrays:
            chunk = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            f.write(chunk)
            h = fnv1a_update(chunk, h)
        f.write(struct.pack("<Q", h))
