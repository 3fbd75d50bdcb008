"""In-memory tables, version tags and the append-only commit log.

Rows are loaded once and never inserted or deleted afterwards.  Uncommitted
data never reaches a table: it lives in transaction write sets and in the
dirty values carried by retired lock requests.  ``install_write`` is the only
mutation and callers run it under the tuple's lock-entry latch.

Payload fill: a seeded random base pattern of ``width`` bytes is XORed with the
8-byte little-endian key repeated across the width.  The result depends only
on (seed, key, width).
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass

from .errors import ConfigError, NotFound


@dataclass(frozen=True)
class TableSpec:
    name: str = "main"
    rows: int = 1024
    field_count: int = 10
    field_width: int = 100
    seed: int = 0

    @property
    def payload_width(self) -> int:
        return self.field_count * self.field_width


class Tuple:
    __slots__ = ("key", "payload", "version")

    def __init__(self, key: int, payload: bytes):
        self.key = key
        self.payload = payload
        # (writer txn id or None, per-tuple write sequence number)
        self.version: tuple[int | None, int] = (None, 0)

    def __repr__(self):
        return f"Tuple(key={self.key}, version={self.version})"


def fill_payload(key: int, width: int, base: int) -> bytes:
    rep = (key & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little") * (width // 8 + 1)
    mixed = base ^ int.from_bytes(rep[:width], "little")
    return mixed.to_bytes(width, "little")


class Table:
    """Hash-indexed fixed-schema table with lazily created lock entries."""

    def __init__(self, name: str, payload_width: int):
        self.name = name
        self.payload_width = payload_width
        self.rows: dict[int, Tuple] = {}
        self.lock_entries: dict = {}

    def __len__(self):
        return len(self.rows)

    def get(self, key: int) -> Tuple:
        try:
            return self.rows[key]
        except KeyError:
            raise NotFound(f"{self.name}: no key {key}") from None

    def entry(self, key: int):
        e = self.lock_entries.get(key)
        if e is None:
            from .locking import LockEntry

            if key not in self.rows:
                raise NotFound(f"{self.name}: no key {key}")
            # setdefault is atomic, so racing creators agree on one entry
            e = self.lock_entries.setdefault(key, LockEntry(self, key))
        return e

    def install_write(self, key: int, payload: bytes, txn_id: int) -> tuple[int, int]:
        tup = self.get(key)
        if len(payload) != self.payload_width:
            raise ValueError(
                f"payload width {len(payload)} != table width {self.payload_width}"
            )
        tup.payload = payload
        tup.version = (txn_id, tup.version[1] + 1)
        return tup.version

    def snapshot(self) -> dict[int, tuple[bytes, tuple[int | None, int]]]:
        return {k: (t.payload, t.version) for k, t in self.rows.items()}


def load_table(spec: TableSpec) -> Table:
    if spec.rows < 1:
        raise ConfigError("rows: table needs at least one row")
    if spec.payload_width < 8:
        raise ConfigError("payload width must be at least 8 bytes")
    width = spec.payload_width
    base = int.from_bytes(random.Random(spec.seed).randbytes(width), "little")
    table = Table(spec.name, width)
    rows = table.rows
    for key in range(spec.rows):
        rows[key] = Tuple(key, fill_payload(key, width, base))
    return table


def install_write(table: Table, key: int, payload: bytes, txn_id: int) -> tuple[int, int]:
    return table.install_write(key, payload, txn_id)


@dataclass(frozen=True)
class LogRecord:
    txn_id: int
    commit_seq: int
    write_set_size: int


class LogSink:
    """Append-only in-memory commit log; the append order defines commit points.

    With ``mirror_path`` set, each record is also written as
    ``txn_id,commit_seq,write_set_size``.
    """

    def __init__(self, mirror_path=None, keep_records: bool = True):
        self._lock = threading.Lock()
        self._seq = 0
        self.keep_records = keep_records
        self.records: list[LogRecord] = []
        self._mirror = open(mirror_path, "w") if mirror_path else None

    @property
    def last_seq(self) -> int:
        return self._seq

    def append(self, txn_id: int, write_set_size: int) -> int:
        with self._lock:
            self._seq += 1
            seq = self._seq
            if self.keep_records:
                self.records.append(LogRecord(txn_id, seq, write_set_size))
            if self._mirror is not None:
                self._mirror.write(f"{txn_id},{seq},{write_set_size}\n")
        return seq

    def close(self):
        if self._mirror is not None:
            self._mirror.close()
            self._mirror = None


def append_log(sink: LogSink, txn) -> int:
    return sink.append(txn.id, len(txn.write_set))


def read_log_mirror(path) -> list[LogRecord]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                a, b, c = line.split(",")
                out.append(LogRecord(int(a), int(b), int(c)))
    return out
