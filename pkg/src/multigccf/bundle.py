"""Deterministic binary container shared by dataset snapshots, graph bundles
and checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes   b"MGCCFBND"
    version      uint32    FORMAT_VERSION
    header_len   uint64    length of the JSON header in bytes
    header       UTF-8 JSON, keys sorted:
                   {"kind": str, "meta": {...},
                    "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    payload      raw C-order array bytes, concatenated in header order

Nothing time- or host-dependent is written, so identical inputs give
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MGCCFBND"
FORMAT_VERSION = 1

_ALLOWED_DTYPES = {"<f8", "<i8", "<i4", "|b1", "|u1"}


class BundleError(ValueError):
    pass


def write_bundle(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write a bundle and return the sha256 hex digest of the file bytes."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(dt, copy=False)
        if dt.str not in _ALLOWED_DTYPES:
            raise BundleError(f"array {name!r}: unsupported dtype {arr.dtype}")
        raw = arr.tobytes(order="C")
        entries.append(
            {"name": name, "dtype": dt.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"kind": kind, "meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    data = b"".join([MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(header)), header, *blobs])
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def read_bundle(path, kind: str | None = None) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise BundleError(f"{path}: not a bundle file")
    version, header_len = struct.unpack("<IQ", data[8:20])
    if version != FORMAT_VERSION:
        raise BundleError(f"{path}: unsupported bundle version {version}")
    header = json.loads(data[20 : 20 + header_len].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise BundleError(f"{path}: expected a {kind!r} bundle, found {header['kind']!r}")
    base = 20 + header_len
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = data[start : start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
