"""Retrieval filter shared by store queries, exports, and filtered restores."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, time, timezone

from .records import VehicleRecord


class InvalidFilter(ValueError):
    """Filter bounds are inverted or malformed."""


@dataclass(frozen=True)
class RetrievalFilter:
    """Optional device equality plus a closed captured_at interval.

    The empty filter matches everything. A whole-day request is the
    interval from 00:00:00Z to 23:59:59Z of that day; see
    :meth:`for_day`.
    """

    device_id: str | None = None
    from_ts: datetime | None = None
    to_ts: datetime | None = None

    @classmethod
    def for_day(cls, day, device_id: str | None = None) -> "RetrievalFilter":
        start = datetime.combine(day, time(0, 0, 0), tzinfo=timezone.utc)
        end = datetime.combine(day, time(23, 59, 59), tzinfo=timezone.utc)
        return cls(device_id=device_id, from_ts=start, to_ts=end)

    def validate(self) -> None:
        if self.from_ts is not None and self.to_ts is not None:
            if self.from_ts > self.to_ts:
                raise InvalidFilter("filter interval start is after its end")
        for bound in (self.from_ts, self.to_ts):
            if bound is not None and bound.tzinfo is None:
                raise InvalidFilter("filter bounds must be timezone-aware")
        if self.device_id is not None and len(self.device_id) != 6:
            raise InvalidFilter("device filter must be a 6-character device id")

    def matches(self, record: VehicleRecord) -> bool:
        if self.device_id is not None and record.device_id != self.device_id:
            return False
        if self.from_ts is not None and record.captured_at < self.from_ts:
            return False
        if self.to_ts is not None and record.captured_at > self.to_ts:
            return False
        return True

    def is_empty(self) -> bool:
        return self.device_id is None and self.from_ts is None and self.to_ts is None

    def to_dict(self) -> dict:
        doc = {}
        if self.device_id is not None:
            doc["device_id"] = self.device_id
        if self.from_ts is not None:
            doc["from"] = self.from_ts.strftime("%Y-%m-%dT%H:%M:%SZ")
        if self.to_ts is not None:
            doc["to"] = self.to_ts.strftime("%Y-%m-%dT%H:%M:%SZ")
        return doc
