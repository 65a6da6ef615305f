#!/usr/bin/env python3
# kv_format.py - SKT1 key/value files, mask sidecars and SKTI index exports

"""
SKT1:  b"SKT1" | u32 N | u32 d | N*d float32 keys | N*d float32 values
       (little endian, row major). An optional mask sidecar holds N bytes 0/1.
SKTI:  b"SKTI" | u32 P | u32 L | u32 N | N*L u16 bucket ids (row major).
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from socketlsh.errors import DimensionMismatchError, FormatError, StorageError
from socketlsh.lsh_core import MAX_HYPERPLANES, BucketAssignment, KvCache

KV_MAGIC = b"SKT1"
INDEX_MAGIC = b"SKTI"
MASK_SUFFIX = ".mask"
_U32_MAX = (1 << 32) - 1


def atomic_write_bytes(path, payload: bytes):
    """Write `payload` to `path` via a temp file so failures leave nothing behind."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise StorageError(f"could not write {path}: {e}") from e


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise StorageError(f"could not read {path}: {e}") from e


def check_kv_header(N: int, d: int):
    """Raise FormatError if (N, d) cannot be written to a 32-bit SKT1 header."""
    if N > _U32_MAX or d > _U32_MAX or N * d > _U32_MAX:
        raise FormatError(f"N={N}, d={d} overflow the 32-bit SKT1 header")


def encode_kv(keys, values) -> bytes:
    keys = np.asarray(keys)
    values = np.asarray(values)
    if keys.shape != values.shape or keys.ndim != 2:
        raise DimensionMismatchError(
            f"keys {keys.shape} and values {values.shape} must be equal N x d arrays"
        )
    N, d = keys.shape
    check_kv_header(N, d)
    header = KV_MAGIC + struct.pack("<II", N, d)
    return (header + np.ascontiguousarray(keys, dtype="<f4").tobytes()
            + np.ascontiguousarray(values, dtype="<f4").tobytes())


def decode_kv(payload: bytes):
    """(keys, values) as float32 arrays from an SKT1 payload."""
    if len(payload) < 12 or payload[:4] != KV_MAGIC:
        raise FormatError("not an SKT1 file (bad magic)")
    N, d = struct.unpack("<II", payload[4:12])
    expected = 12 + 8 * N * d
    if len(payload) != expected:
        raise FormatError(
            f"SKT1 payload is {len(payload)} bytes, header N={N}, d={d} implies {expected}"
        )
    body = np.frombuffer(payload, dtype="<f4", offset=12).astype(np.float32)
    keys = body[:N * d].reshape(N, d)
    values = body[N * d:].reshape(N, d)
    return keys, values


def write_kv(path, cache: KvCache):
    atomic_write_bytes(path, encode_kv(cache.keys, cache.values))


def mask_path_for(kv_path) -> Path:
    return Path(str(kv_path) + MASK_SUFFIX)


def write_mask(path, mask):
    mask = np.asarray(mask, dtype=bool).astype(np.uint8)
    atomic_write_bytes(path, mask.tobytes())


def read_mask(path, N: int) -> np.ndarray:
    raw = np.frombuffer(_read_bytes(path), dtype=np.uint8)
    if raw.shape[0] != N:
        raise FormatError(f"mask sidecar has {raw.shape[0]} bytes, expected {N}")
    if np.any(raw > 1):
        raise FormatError("mask sidecar bytes must be 0 or 1")
    return raw.astype(bool)


def read_kv(path, mask_path=None) -> KvCache:
    """
    Load an SKT1 file, with its mask sidecar if given.

    Raises:
        FormatError: bad magic, truncated payload, malformed mask
        StorageError: the file cannot be read
    """
    keys, values = decode_kv(_read_bytes(path))
    mask = read_mask(mask_path, keys.shape[0]) if mask_path is not None else None
    return KvCache.from_arrays(keys, values, mask)


def encode_index(assignment: BucketAssignment) -> bytes:
    ids = np.ascontiguousarray(assignment.bucket_ids, dtype="<u2")
    return INDEX_MAGIC + struct.pack("<III", assignment.P, assignment.L, assignment.N) + ids.tobytes()


def write_index(path, assignment: BucketAssignment):
    atomic_write_bytes(path, encode_index(assignment))


def read_index(path, expected_N=None) -> BucketAssignment:
    payload = _read_bytes(path)
    if len(payload) < 16 or payload[:4] != INDEX_MAGIC:
        raise FormatError("not an SKTI file (bad magic)")
    P, L, N = struct.unpack("<III", payload[4:16])
    if not 1 <= P <= MAX_HYPERPLANES or L < 1:
        raise FormatError(f"SKTI header has invalid P={P}, L={L}")
    if len(payload) != 16 + 2 * N * L:
        raise FormatError(f"SKTI payload is {len(payload)} bytes, header implies {16 + 2 * N * L}")
    if expected_N is not None and N != expected_N:
        raise FormatError(f"index covers {N} keys, cache has {expected_N}")
    ids = np.frombuffer(payload, dtype="<u2", offset=16).astype(np.uint16).reshape(N, L)
    if np.any(ids >= (1 << P)):
        raise FormatError(f"SKTI bucket ids exceed 2^{P}")
    return BucketAssignment(bucket_ids=ids, P=P)
