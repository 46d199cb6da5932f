"""Checksummed binary file envelope shared by all index snapshots.

Layout (little-endian):

    bytes 0..4    magic ``FXSN``
    bytes 4..8    payload kind tag (4 ASCII bytes, e.g. ``HNSW``)
    bytes 8..12   format version (u32)
    bytes 12..20  payload length (u64)
    bytes 20..52  SHA-256 of payload
    bytes 52..    payload

Stability is guaranteed only within a format version.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

MAGIC = b"FXSN"
_HEADER = struct.Struct("<4s4sIQ32s")


class SnapshotError(Exception):
    """Base class for snapshot read failures."""


class CorruptSnapshotError(SnapshotError):
    """File is truncated, has a bad magic/kind, or fails its checksum."""


class VersionMismatchError(SnapshotError):
    """File was written with an unsupported format version."""


def write_snapshot(path: Path | str, kind: bytes, version: int, payload: bytes) -> None:
    if len(kind) != 4:
        raise ValueError("kind tag must be exactly 4 bytes")
    digest = hashlib.sha256(payload).digest()
    header = _HEADER.pack(MAGIC, kind, version, len(payload), digest)
    Path(path).write_bytes(header + payload)


def read_snapshot(path: Path | str, kind: bytes, version: int) -> bytes:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptSnapshotError(f"{path}: file shorter than snapshot header")
    magic, file_kind, file_version, length, digest = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptSnapshotError(f"{path}: bad magic {magic!r}")
    if file_kind != kind:
        raise CorruptSnapshotError(
            f"{path}: expected kind {kind.decode()!r}, found {file_kind.decode(errors='replace')!r}"
        )
    if file_version != version:
        raise VersionMismatchError(
            f"{path}: format version {file_version} unsupported (expected {version})"
        )
    payload = raw[_HEADER.size :]
    if len(payload) != length:
        raise CorruptSnapshotError(
            f"{path}: payload truncated ({len(payload)} of {length} bytes)"
        )
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptSnapshotError(f"{path}: checksum mismatch")
    return payload
