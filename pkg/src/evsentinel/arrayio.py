"""Binary container for named float64 arrays plus a JSON header.

Layout (all integers little-endian):

    magic "EVSN" | u32 format version | u32 header length | header JSON
    | u32 array count
    | per array: u32 name length | name UTF-8 | u32 ndim | u32*ndim dims
                 | float64 LE payload
    | 32-byte SHA-256 of everything before it

Checkpoints and corpus files share this convention.  Round-trips are
bitwise exact and the digest is verified on read.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"EVSN"
FORMAT_VERSION = 1


def write_blob(path: Path | str, header: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write header + arrays; returns the hex content digest."""
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(header_bytes)))
    parts.append(header_bytes)
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    digest = hashlib.sha256(payload).digest()
    Path(path).write_bytes(payload + digest)
    return digest.hex()


def read_blob(path: Path | str) -> tuple[dict, dict[str, np.ndarray], str]:
    """Read and verify a blob; returns (header, arrays, hex digest)."""
    raw = Path(path).read_bytes()
    if len(raw) < 44 or raw[:4] != MAGIC:
        raise DataError(f"{path}: not an EVSN container")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise DataError(f"{path}: content digest mismatch, file is corrupt")
    off = 4
    (version,) = struct.unpack_from("<I", payload, off)
    off += 4
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    (hlen,) = struct.unpack_from("<I", payload, off)
    off += 4
    header = json.loads(payload[off:off + hlen].decode("utf-8"))
    off += hlen
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", payload, off)
        off += 4
        name = payload[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", payload, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", payload, off) if ndim else ()
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(payload, dtype="<f8", count=size, offset=off).reshape(shape)
        arrays[name] = arr.astype(np.float64)  # own, writable copy
        off += 8 * size
    return header, arrays, hashlib.sha256(payload).hexdigest()
