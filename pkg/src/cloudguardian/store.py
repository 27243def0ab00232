"""Record store holding real rows and post-anchor placeholder rows.

The embedded reference implementation keeps rows in memory and, when given
a path, rewrites the whole file atomically (write-temp-then-rename) after
every mutation batch. Mutations are applied as single atomic batches, so a
concurrent query observes the store entirely before or entirely after a
swap or restore, never a mixture.

Callers go through a fixed-size connection pool. The pool exists to bound
concurrency the way a real database client would, and its counters
(``in_use``, ``idle``, ``peak_in_use``, ``total_acquires``) make that bound
observable in tests. An external SQL adapter would implement the same
operation surface behind a real driver.
"""

from __future__ import annotations

import json
import os
import queue
import tempfile
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone

from .filters import InvalidFilter, RetrievalFilter
from .records import VehicleRecord

KIND_REAL = "real"
KIND_PLACEHOLDER = "placeholder"

SURROGATE_PREFIX = "db_"

_ISO = "%Y-%m-%dT%H:%M:%SZ"


class StoreError(Exception):
    pass


class StoreUnavailable(StoreError):
    """Backing file could not be read or written."""


class UnknownRow(StoreError):
    """A row id does not exist or does not name a real row; nothing changed."""


class UnknownSurrogate(StoreError):
    """No placeholder row carries the given surrogate id."""


class PoolTimeout(StoreError):
    """No pooled connection became free within the acquire timeout."""


@dataclass(frozen=True)
class PoolConfig:
    size: int = 4
    acquire_timeout_ms: float = 5_000.0

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError("pool size must be at least 1")


@dataclass(frozen=True)
class PoolStats:
    in_use: int
    idle: int
    peak_in_use: int
    total_acquires: int


@dataclass(frozen=True)
class RecordRow:
    """One stored row: either a real record or an anchor placeholder."""

    row_id: str
    kind: str
    plate: str | None = None
    device_id: str | None = None
    captured_at: datetime | None = None
    surrogate_id: str | None = None
    record_count: int | None = None
    anchored_at: datetime | None = None

    def record(self) -> VehicleRecord:
        if self.kind != KIND_REAL:
            raise ValueError("placeholder rows carry no record data")
        return VehicleRecord(self.plate, self.device_id, self.captured_at)


def _row_to_dict(row: RecordRow) -> dict:
    if row.kind == KIND_REAL:
        return {
            "row_id": row.row_id,
            "kind": row.kind,
            "plate": row.plate,
            "device_id": row.device_id,
            "captured_at": row.captured_at.strftime(_ISO),
        }
    return {
        "row_id": row.row_id,
        "kind": row.kind,
        "surrogate_id": row.surrogate_id,
        "record_count": row.record_count,
        "anchored_at": row.anchored_at.strftime(_ISO),
    }


def _row_from_dict(raw: dict) -> RecordRow:
    if raw["kind"] == KIND_REAL:
        return RecordRow(
            row_id=raw["row_id"],
            kind=KIND_REAL,
            plate=raw["plate"],
            device_id=raw["device_id"],
            captured_at=datetime.strptime(raw["captured_at"], _ISO).replace(
                tzinfo=timezone.utc
            ),
        )
    return RecordRow(
        row_id=raw["row_id"],
        kind=KIND_PLACEHOLDER,
        surrogate_id=raw["surrogate_id"],
        record_count=raw["record_count"],
        anchored_at=datetime.strptime(raw["anchored_at"], _ISO).replace(
            tzinfo=timezone.utc
        ),
    )


class _Connection:
    """Handle vended by the pool; owns no state of its own."""

    __slots__ = ("index",)

    def __init__(self, index: int):
        self.index = index


class ConnectionPool:
    def __init__(self, config: PoolConfig):
        self.config = config
        self._free: queue.Queue[_Connection] = queue.Queue(maxsize=config.size)
        for i in range(config.size):
            self._free.put(_Connection(i))
        self._stats_lock = threading.Lock()
        self._in_use = 0
        self._peak = 0
        self._acquires = 0

    def acquire(self) -> _Connection:
        try:
            conn = self._free.get(timeout=self.config.acquire_timeout_ms / 1000.0)
        except queue.Empty:
            raise PoolTimeout(
                f"no connection free within {self.config.acquire_timeout_ms} ms"
            ) from None
        with self._stats_lock:
            self._in_use += 1
            self._acquires += 1
            self._peak = max(self._peak, self._in_use)
        return conn

    def release(self, conn: _Connection) -> None:
        with self._stats_lock:
            self._in_use -= 1
        self._free.put(conn)

    def stats(self) -> PoolStats:
        with self._stats_lock:
            return PoolStats(
                in_use=self._in_use,
                idle=self.config.size - self._in_use,
                peak_in_use=self._peak,
                total_acquires=self._acquires,
            )


class RecordStore:
    """Embedded, optionally file-backed store of real and placeholder rows."""

    def __init__(self, path: str | None = None, pool: PoolConfig | None = None):
        self._path = path
        self._pool = ConnectionPool(pool or PoolConfig())
        self._data_lock = threading.RLock()
        self._rows: dict[str, RecordRow] = {}
        self._next_row = 1
        self._operations = 0
        if path and os.path.exists(path):
            self._load()

    # -- contract operations ------------------------------------------------

    def insert_record(self, record: VehicleRecord) -> str:
        return self.insert_records([record])[0]

    def insert_records(self, records: list[VehicleRecord]) -> list[str]:
        """Insert many records as one atomic batch; returns their row ids."""
        for record in records:
            record.validate()
        with self._connection(), self._data_lock:
            self._operations += 1
            row_ids = []
            for record in records:
                row_id = self._new_row_id()
                self._rows[row_id] = RecordRow(
                    row_id=row_id,
                    kind=KIND_REAL,
                    plate=record.plate,
                    device_id=record.device_id,
                    captured_at=record.captured_at,
                )
                row_ids.append(row_id)
            self._persist()
            return row_ids

    def swap_for_placeholder(
        self, row_ids: list[str], surrogate_id: str, anchored_at: datetime
    ) -> RecordRow:
        """Atomically replace the listed real rows with one placeholder."""
        with self._connection(), self._data_lock:
            self._operations += 1
            for row_id in row_ids:
                row = self._rows.get(row_id)
                if row is None or row.kind != KIND_REAL:
                    raise UnknownRow(f"row {row_id!r} is absent or not a real row")
            for row_id in row_ids:
                del self._rows[row_id]
            placeholder = RecordRow(
                row_id=self._new_row_id(),
                kind=KIND_PLACEHOLDER,
                surrogate_id=surrogate_id,
                record_count=len(row_ids),
                anchored_at=anchored_at,
            )
            self._rows[placeholder.row_id] = placeholder
            self._persist()
            return placeholder

    def restore_records(self, surrogate_id: str, records: list[VehicleRecord]) -> int:
        """Delete the placeholder and insert the records, atomically."""
        with self._connection(), self._data_lock:
            self._operations += 1
            placeholder = self._find_placeholder(surrogate_id)
            del self._rows[placeholder.row_id]
            self._insert_rows_locked(records)
            self._persist()
            return len(records)

    def restore_records_partial(
        self,
        surrogate_id: str,
        records: list[VehicleRecord],
        remainder_surrogate_id: str,
        remainder_count: int,
        anchored_at: datetime,
    ) -> int:
        """Restore part of a placeholder's batch and re-point the remainder.

        One atomic batch: the old placeholder goes away, the matched records
        become real rows, and a fresh placeholder carries the still-anchored
        remainder. Keeps placeholder accounting conserved without the
        remainder's plaintext ever touching the store.
        """
        if remainder_count < 1:
            raise ValueError("remainder_count must be at least 1")
        with self._connection(), self._data_lock:
            self._operations += 1
            placeholder = self._find_placeholder(surrogate_id)
            del self._rows[placeholder.row_id]
            self._insert_rows_locked(records)
            remainder = RecordRow(
                row_id=self._new_row_id(),
                kind=KIND_PLACEHOLDER,
                surrogate_id=remainder_surrogate_id,
                record_count=remainder_count,
                anchored_at=anchored_at,
            )
            self._rows[remainder.row_id] = remainder
            self._persist()
            return len(records)

    def query(self, flt: RetrievalFilter | None = None) -> list[VehicleRecord]:
        """Real records matching every present criterion, sorted for determinism."""
        flt = flt or RetrievalFilter()
        if not isinstance(flt, RetrievalFilter):
            raise InvalidFilter(f"expected RetrievalFilter, got {type(flt).__name__}")
        flt.validate()
        with self._connection(), self._data_lock:
            self._operations += 1
            matches = [
                row.record()
                for row in self._rows.values()
                if row.kind == KIND_REAL and flt.matches(row.record())
            ]
        matches.sort(key=lambda r: (r.captured_at, r.plate))
        return matches

    def pool_stats(self) -> PoolStats:
        return self._pool.stats()

    # -- inspection helpers ---------------------------------------------------

    def real_rows(self) -> list[RecordRow]:
        with self._data_lock:
            rows = [r for r in self._rows.values() if r.kind == KIND_REAL]
        rows.sort(key=lambda r: r.row_id)
        return rows

    def placeholders(self) -> list[RecordRow]:
        with self._data_lock:
            rows = [r for r in self._rows.values() if r.kind == KIND_PLACEHOLDER]
        rows.sort(key=lambda r: r.row_id)
        return rows

    def count_real(self) -> int:
        with self._data_lock:
            return sum(1 for r in self._rows.values() if r.kind == KIND_REAL)

    def count_placeholders(self) -> int:
        with self._data_lock:
            return sum(1 for r in self._rows.values() if r.kind == KIND_PLACEHOLDER)

    def operations_total(self) -> int:
        with self._data_lock:
            return self._operations

    def dump_bytes(self) -> bytes:
        """Serialized snapshot of every row, for at-rest content scans."""
        with self._data_lock:
            return self._serialize()

    # -- internals ----------------------------------------------------------

    @contextmanager
    def _connection(self):
        conn = self._pool.acquire()
        try:
            yield conn
        finally:
            self._pool.release(conn)

    def _insert_rows_locked(self, records: list[VehicleRecord]) -> None:
        for record in records:
            record.validate()
            row_id = self._new_row_id()
            self._rows[row_id] = RecordRow(
                row_id=row_id,
                kind=KIND_REAL,
                plate=record.plate,
                device_id=record.device_id,
                captured_at=record.captured_at,
            )

    def _find_placeholder(self, surrogate_id: str) -> RecordRow:
        for row in self._rows.values():
            if row.kind == KIND_PLACEHOLDER and row.surrogate_id == surrogate_id:
                return row
        raise UnknownSurrogate(f"no placeholder with surrogate {surrogate_id!r}")

    def _new_row_id(self) -> str:
        row_id = f"row_{self._next_row:010d}"
        self._next_row += 1
        return row_id

    def _serialize(self) -> bytes:
        rows = [_row_to_dict(self._rows[k]) for k in sorted(self._rows)]
        doc = {"next_row": self._next_row, "rows": rows}
        return json.dumps(doc, indent=1).encode("utf-8")

    def _persist(self) -> None:
        if not self._path:
            return
        payload = self._serialize()
        directory = os.path.dirname(os.path.abspath(self._path))
        try:
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=".store-", suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            os.replace(tmp, self._path)
        except OSError as exc:
            raise StoreUnavailable(f"cannot write store file {self._path}: {exc}") from exc

    def _load(self) -> None:
        try:
            with open(self._path, "rb") as fh:
                doc = json.loads(fh.read().decode("utf-8"))
        except (OSError, ValueError) as exc:
            raise StoreUnavailable(f"cannot read store file {self._path}: {exc}") from exc
        self._rows = {raw["row_id"]: _row_from_dict(raw) for raw in doc["rows"]}
        self._next_row = doc["next_row"]
