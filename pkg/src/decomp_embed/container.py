"""Versioned little-endian binary container for named arrays plus JSON metadata.

Layout::

    magic        4 bytes (e.g. b"CEMB", b"DSET")
    version      uint32
    header_len   uint32
    header       UTF-8 JSON: {"meta": ..., "arrays": [{name, dtype, shape, offset, nbytes}]}
    payload      concatenated raw arrays, little-endian, C order
    crc32        uint32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import IntegrityError, VersionError

_PREFIX = struct.Struct("<4sII")


def _le(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def dumps(magic: bytes, version: int, meta: dict, arrays: dict) -> bytes:
    directory = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = _le(np.asarray(arr))
        raw = a.tobytes()
        directory.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                          "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": directory}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(magic, version, len(header)) + header + b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(data: bytes, magic: bytes, version: int) -> tuple[dict, dict]:
    if len(data) < _PREFIX.size + 4:
        raise IntegrityError(f"file too short ({len(data)} bytes)")
    got_magic, got_version, header_len = _PREFIX.unpack_from(data)
    if got_magic != magic:
        raise IntegrityError(f"bad magic {got_magic!r}, expected {magic!r}")
    if got_version != version:
        raise VersionError(f"unsupported format version: expected {version}, found {got_version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise IntegrityError("checksum mismatch (truncated or corrupt file)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"unreadable header: {exc}") from None
    payload = body[start + header_len:]
    arrays = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise IntegrityError(f"array {entry['name']!r} runs past end of payload")
        a = np.frombuffer(payload[lo:hi], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = a.reshape(entry["shape"]).astype(a.dtype.newbyteorder("="))
    return header["meta"], arrays


def write(path, magic: bytes, version: int, meta: dict, arrays: dict) -> None:
    data = dumps(magic, version, meta, arrays)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def read(path, magic: bytes, version: int) -> tuple[dict, dict]:
    return loads(Path(path).read_bytes(), magic, version)
