"""Versioned, checksummed binary checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes   b"GCLCKPT\\0"
    version      uint32
    header_len   uint64
    header       header_len bytes of UTF-8 JSON (metadata + array directory)
    arrays       concatenated little-endian float64 payloads, in directory order
    sha256       32 bytes over everything above
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, FormatError, VersionMismatch

MAGIC = b"GCLCKPT\0"
FORMAT_VERSION = 1
_DIGEST_LEN = 32


@dataclass
class Checkpoint:
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if self.version != other.version or self.meta != other.meta:
            return False
        if self.arrays.keys() != other.arrays.keys():
            return False
        return all(
            self.arrays[k].shape == other.arrays[k].shape
            and np.array_equal(self.arrays[k], other.arrays[k])
            for k in self.arrays
        )


def to_bytes(ckpt: Checkpoint) -> bytes:
    directory = []
    blobs = []
    for name in sorted(ckpt.arrays):
        arr = np.asarray(ckpt.arrays[name], dtype="<f8", order="C")
        directory.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = json.dumps({"meta": ckpt.meta, "arrays": directory},
                        sort_keys=True, allow_nan=False).encode("utf-8")
    body = b"".join([MAGIC, struct.pack("<IQ", ckpt.version, len(header)), header, *blobs])
    return body + hashlib.sha256(body).digest()


def from_bytes(data: bytes, path=None) -> Checkpoint:
    fixed = len(MAGIC) + 12
    if len(data) < fixed + _DIGEST_LEN or data[:len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file", path)
    body, digest = data[:-_DIGEST_LEN], data[-_DIGEST_LEN:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumMismatch(f"checkpoint {path or ''} failed its checksum".strip())
    version, header_len = struct.unpack("<IQ", body[len(MAGIC):fixed])
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {FORMAT_VERSION}")
    header = json.loads(body[fixed:fixed + header_len].decode("utf-8"))
    offset = fixed + header_len
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(body):
            raise FormatError(f"array {entry['name']!r} runs past end of file", path)
        arrays[entry["name"]] = np.frombuffer(body, dtype="<f8", count=count,
                                              offset=offset).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(body):
        raise FormatError("trailing bytes after array payload", path)
    return Checkpoint(arrays, header["meta"], version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes(), path)
