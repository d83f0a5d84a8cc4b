"""STEN tensor files: ``SMAL`` magic, u8 version, u8 dtype, u32 rank, u32 dims, raw payload.

All integers and the payload are little-endian; the payload is row-major.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SMAL"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class StenError(ValueError):
    pass


def dumps(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        raise StenError(f"unsupported dtype {arr.dtype}; STEN stores float32 or float64")
    code = _CODES[arr.dtype]
    header = MAGIC + struct.pack("<BBI", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def loads(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(buf) < 10 or buf[:4] != MAGIC:
        raise StenError(f"{source}: not a STEN file (bad magic)")
    version, code, rank = struct.unpack_from("<BBI", buf, 4)
    if version != VERSION:
        raise StenError(f"{source}: unsupported STEN version {version}")
    if code not in _DTYPES:
        raise StenError(f"{source}: unknown dtype code {code}")
    off = 10
    if len(buf) < off + 4 * rank:
        raise StenError(f"{source}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    dtype = _DTYPES[code]
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) - off != n * dtype.itemsize:
        raise StenError(f"{source}: payload has {len(buf) - off} bytes, expected {n * dtype.itemsize} for shape {shape}")
    arr = np.frombuffer(buf, dtype=dtype, count=n, offset=off).reshape(shape)
    return arr.astype(dtype.newbyteorder("="), copy=True)


def save(path, array: np.ndarray) -> None:
    Path(path).write_bytes(dumps(array))


def load(path) -> np.ndarray:
    p = Path(path)
    try:
        buf = p.read_bytes()
    except FileNotFoundError:
        raise FileNotFoundError(f"missing STEN file: {p}") from None
    return loads(buf, str(p))
