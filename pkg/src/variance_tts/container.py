"""Tagged, length-prefixed binary container shared by checkpoints and the feature cache.

Layout (all integers little-endian)::

    magic  b"VTTS"
    u32    format version
    repeated sections:  4-byte tag, u64 payload length, payload
        META  UTF-8 JSON: {"kind", "meta", "arrays": [{name, dtype, shape, offset, nbytes}]}
        DATA  raw little-endian array bytes at the manifest offsets
    8-byte blake2b digest of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import ChecksumError, DataError, VersionError

MAGIC = b"VTTS"
VERSION = 1
CHECKSUM_BYTES = 8

# dtype code -> little-endian numpy dtype
DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8", "u1": "|u1", "b1": "|b1"}


def _code(arr: np.ndarray) -> str:
    for code, dt in DTYPES.items():
        if arr.dtype == np.dtype(dt):
            return code
    raise DataError(f"unsupported array dtype {arr.dtype}")


def _digest(buf: bytes) -> bytes:
    return hashlib.blake2b(buf, digest_size=CHECKSUM_BYTES).digest()


def encode(arrays: dict[str, np.ndarray], meta: dict | None = None, kind: str = "",
           version: int = VERSION) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, a in arrays.items():
        a = np.asarray(a)
        code = _code(a)
        raw = np.ascontiguousarray(a, dtype=DTYPES[code]).tobytes()
        manifest.append({"name": name, "dtype": code, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta or {}, "arrays": manifest}, sort_keys=True).encode("utf-8")
    data = b"".join(chunks)
    body = b"".join([
        MAGIC, struct.pack("<I", version),
        b"META", struct.pack("<Q", len(header)), header,
        b"DATA", struct.pack("<Q", len(data)), data,
    ])
    return body + _digest(body)


def decode(buf: bytes, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    if len(buf) < len(MAGIC) + 4 + CHECKSUM_BYTES or buf[:4] != MAGIC:
        raise DataError("not a variance-tts container (bad magic)")
    body, digest = buf[:-CHECKSUM_BYTES], buf[-CHECKSUM_BYTES:]
    if _digest(body) != digest:
        raise ChecksumError("checksum mismatch: file is corrupted")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise VersionError(f"unsupported version {version} (expected {VERSION})")

    sections, pos = {}, 8
    while pos < len(body):
        if pos + 12 > len(body):
            raise DataError("truncated section header")
        tag = body[pos : pos + 4].decode("ascii", errors="replace")
        (n,) = struct.unpack_from("<Q", body, pos + 4)
        start = pos + 12
        if start + n > len(body):
            raise DataError(f"section {tag} overruns the file")
        sections[tag] = body[start : start + n]
        pos = start + n
    if "META" not in sections or "DATA" not in sections:
        raise DataError("container is missing META or DATA")

    header = json.loads(sections["META"].decode("utf-8"))
    if kind is not None and header.get("kind") != kind:
        raise DataError(f"expected a {kind!r} container, found {header.get('kind')!r}")
    data = sections["DATA"]
    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(DTYPES[entry["dtype"]])
        off, nbytes = entry["offset"], entry["nbytes"]
        if off + nbytes > len(data):
            raise DataError(f"array {entry['name']} overruns DATA")
        a = np.frombuffer(data, dtype=dt, count=nbytes // dt.itemsize, offset=off)
        arrays[entry["name"]] = a.reshape(entry["shape"]).astype(dt.newbyteorder("="), copy=True)
    return arrays, header["meta"]


def write_container(path, arrays, meta=None, kind: str = "") -> None:
    """Write atomically: a crash mid-write never leaves a truncated file behind."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = encode(arrays, meta, kind)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(buf)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path, kind: str | None = None):
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return decode(buf, kind)
