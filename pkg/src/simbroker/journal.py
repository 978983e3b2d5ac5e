"""Append-only command journal: length-prefixed records with per-record CRC.

Record layout: 4-byte big-endian payload length, UTF-8 JSON payload, 4-byte
big-endian CRC32 of the payload. A torn final record (crash mid-append, i.e.
an unacknowledged command) is dropped on read; a complete record with a bad
checksum, or a sequence gap, raises CorruptJournal.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Optional

__all__ = ["JournalEntry", "CorruptJournal", "JournalWriter", "read_journal"]

_LEN = struct.Struct(">I")


class CorruptJournal(Exception):
    def __init__(self, sequence: int, reason: str):
        self.sequence = sequence
        super().__init__(f"journal corrupt at record {sequence}: {reason}")


@dataclass(frozen=True)
class JournalEntry:
    """One acknowledged command and its outcome."""

    sequence: int
    at: str  # ISO timestamp
    issued_by: str
    kind: str
    session_id: int
    resulting_state: str
    spec: Optional[dict] = None
    binding: Optional[dict] = None
    container: Optional[dict] = None

    def to_bytes(self) -> bytes:
        payload = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return _LEN.pack(len(payload)) + payload + _LEN.pack(zlib.crc32(payload))


class JournalWriter:
    """Single-writer appender; each append is flushed and fsynced before
    returning, so an acknowledged command is always durable."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "ab")
        self._next_seq = _last_sequence(self.path) + 1

    @property
    def next_sequence(self) -> int:
        return self._next_seq

    def append(self, entry: JournalEntry) -> None:
        if entry.sequence != self._next_seq:
            raise ValueError(
                f"sequence must be gapless: expected {self._next_seq}, got {entry.sequence}"
            )
        self._fh.write(entry.to_bytes())
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._next_seq += 1

    def close(self) -> None:
        self._fh.close()


def _last_sequence(path: Path) -> int:
    if not path.exists():
        return 0
    entries = read_journal(path)
    return entries[-1].sequence if entries else 0


def read_journal(path: str | Path) -> list[JournalEntry]:
    """Read all complete records, verifying checksums and gapless sequence."""
    path = Path(path)
    entries: list[JournalEntry] = []
    if not path.exists():
        return entries
    data = path.read_bytes()
    pos = 0
    expected_seq = 1
    while pos < len(data):
        if pos + _LEN.size > len(data):
            break  # torn length prefix
        (length,) = _LEN.unpack_from(data, pos)
        end = pos + _LEN.size + length + _LEN.size
        if end > len(data):
            break  # torn record: crash before the append was acknowledged
        payload = data[pos + _LEN.size : pos + _LEN.size + length]
        (crc,) = _LEN.unpack_from(data, pos + _LEN.size + length)
        if zlib.crc32(payload) != crc:
            raise CorruptJournal(expected_seq, "checksum mismatch")
        try:
            fields = json.loads(payload.decode("utf-8"))
            entry = JournalEntry(**fields)
        except (ValueError, TypeError) as exc:
            raise CorruptJournal(expected_seq, f"undecodable payload: {exc}") from exc
        if entry.sequence != expected_seq:
            raise CorruptJournal(expected_seq, f"sequence gap (found {entry.sequence})")
        entries.append(entry)
        expected_seq += 1
        pos = end
    return entries
