"""Append-only record files.

Record layout: u32 big-endian length, record bytes, u32 CRC32 of the
record bytes. A torn final record (fewer bytes than its length claims) is
truncated on open; a complete record with a bad CRC is corruption.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

_LEN = struct.Struct(">I")
_CRC = struct.Struct(">I")
OVERHEAD = _LEN.size + _CRC.size


class CorruptRecord(Exception):
    def __init__(self, offset: int, index: int, why: str):
        super().__init__(f"record {index} at offset {offset}: {why}")
        self.offset = offset
        self.index = index
        self.why = why


@dataclass(frozen=True)
class ScanResult:
    records: list[tuple[int, bytes]]   # (offset, record bytes)
    valid_end: int
    torn_tail: bool


def frame_record(data: bytes) -> bytes:
    return _LEN.pack(len(data)) + data + _CRC.pack(zlib.crc32(data))


def scan_records(buf, strict: bool = True) -> ScanResult:
    """Walk every record. CRC mismatch raises CorruptRecord when ``strict``."""
    view = memoryview(buf)
    out: list[tuple[int, bytes]] = []
    pos = 0
    n = len(view)
    while pos < n:
        if n - pos < _LEN.size:
            return ScanResult(out, pos, True)
        (length,) = _LEN.unpack_from(view, pos)
        end = pos + _LEN.size + length + _CRC.size
        if end > n:
            return ScanResult(out, pos, True)
        data = bytes(view[pos + _LEN.size:pos + _LEN.size + length])
        (crc,) = _CRC.unpack_from(view, end - _CRC.size)
        if crc != zlib.crc32(data):
            if strict:
                raise CorruptRecord(pos, len(out), "crc mismatch")
        out.append((pos, data))
        pos = end
    return ScanResult(out, pos, False)


class RecordLog:
    """Append-only log, file-backed when ``path`` is given, otherwise in memory."""

    def __init__(self, path: str | os.PathLike | None = None, fsync: bool = False):
        self.path = Path(path) if path is not None else None
        self.fsync = fsync
        self._mem = bytearray()
        self._fh = None
        self.recovered_torn_tail = False
        if self.path is not None:
            existing = self.path.read_bytes() if self.path.exists() else b""
            res = scan_records(existing)
            if res.torn_tail:
                self.recovered_torn_tail = True
                with open(self.path, "r+b") as fh:
                    fh.truncate(res.valid_end)
                existing = existing[:res.valid_end]
            self._mem = bytearray(existing)
            self._fh = open(self.path, "ab")

    def append(self, data: bytes) -> int:
        offset = len(self._mem)
        rec = frame_record(data)
        self._mem += rec
        if self._fh is not None:
            self._fh.write(rec)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        return offset

    def read(self, offset: int) -> bytes:
        (length,) = _LEN.unpack_from(self._mem, offset)
        start = offset + _LEN.size
        return bytes(self._mem[start:start + length])

    def records(self):
        return scan_records(self._mem).records

    def __len__(self) -> int:
        return len(self._mem)

    def getvalue(self) -> bytes:
        return bytes(self._mem)

    def save(self, path) -> None:
        Path(path).write_bytes(self._mem)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
