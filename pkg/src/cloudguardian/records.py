"""Canonical vehicle record type and the fixed-width 36-character codec.

Every record ships to the chain as exactly 36 characters: the plate
right-padded with spaces to 10, a 6-character device ID, and a 20-character
ISO-8601 UTC timestamp. A payload is the in-order concatenation of such
units, so its length is always a multiple of 36.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timezone

PLATE_WIDTH = 10
DEVICE_WIDTH = 6
TIMESTAMP_WIDTH = 20
RECORD_WIDTH = PLATE_WIDTH + DEVICE_WIDTH + TIMESTAMP_WIDTH

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"

_PLATE_RE = re.compile(r"^[A-Z0-9-]{1,10}$")
_DEVICE_RE = re.compile(r"^[A-Z0-9]{6}$")


class InvalidRecord(ValueError):
    """A record field violates its charset, length, or timestamp contract."""


class MalformedRecord(ValueError):
    """A 36-character unit cannot be decoded back into a record."""


class EmptyPayload(ValueError):
    """Payload assembly was asked to pack zero records."""


class MalformedPayload(ValueError):
    """Payload text length is not a multiple of the record width."""


@dataclass(frozen=True, order=True)
class VehicleRecord:
    """One captured sighting: a plate, the capturing device, and the time."""

    plate: str
    device_id: str
    captured_at: datetime

    @classmethod
    def create(cls, plate: str, device_id: str, captured_at: datetime) -> "VehicleRecord":
        """Build a record, normalizing the timestamp to whole-second UTC.

        Sub-second capture resolution is floored away at ingestion so the
        20-character rendering is exact.
        """
        if captured_at.tzinfo is None:
            captured_at = captured_at.replace(tzinfo=timezone.utc)
        captured_at = captured_at.astimezone(timezone.utc).replace(microsecond=0)
        record = cls(plate=plate, device_id=device_id, captured_at=captured_at)
        record.validate()
        return record

    def validate(self) -> None:
        """Raise InvalidRecord unless every field meets its contract."""
        if not isinstance(self.plate, str) or not _PLATE_RE.match(self.plate):
            raise InvalidRecord(
                f"plate must be 1-10 chars of [A-Z0-9-], got {self.plate!r}"
            )
        if not isinstance(self.device_id, str) or not _DEVICE_RE.match(self.device_id):
            raise InvalidRecord(
                f"device_id must be exactly 6 chars of [A-Z0-9], got {self.device_id!r}"
            )
        ts = self.captured_at
        if not isinstance(ts, datetime) or ts.tzinfo is None:
            raise InvalidRecord("captured_at must be a timezone-aware datetime")
        if ts.utcoffset().total_seconds() != 0:
            raise InvalidRecord("captured_at must be in UTC")
        if ts.microsecond != 0:
            raise InvalidRecord("captured_at must have whole-second resolution")

    @property
    def captured_at_iso(self) -> str:
        return self.captured_at.strftime(TIMESTAMP_FORMAT)


@dataclass(frozen=True)
class Payload:
    """Concatenation of fixed-width record units stored under one chain ID."""

    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise EmptyPayload("payload must contain at least one record")
        if len(self.text) % RECORD_WIDTH != 0:
            raise MalformedPayload(
                f"payload length {len(self.text)} is not a multiple of {RECORD_WIDTH}"
            )

    @property
    def record_count(self) -> int:
        return len(self.text) // RECORD_WIDTH


def encode_record(record: VehicleRecord) -> str:
    """Encode a valid record as its 36-character fixed-width unit."""
    record.validate()
    return (
        record.plate.ljust(PLATE_WIDTH)
        + record.device_id
        + record.captured_at_iso
    )


def decode_record(text: str) -> VehicleRecord:
    """Decode one 36-character unit; inverse of :func:`encode_record`."""
    if not isinstance(text, str) or len(text) != RECORD_WIDTH:
        raise MalformedRecord(f"record unit must be {RECORD_WIDTH} chars, got {len(text)}")
    plate = text[:PLATE_WIDTH].rstrip(" ")
    device_id = text[PLATE_WIDTH : PLATE_WIDTH + DEVICE_WIDTH]
    ts_text = text[PLATE_WIDTH + DEVICE_WIDTH :]
    try:
        captured_at = datetime.strptime(ts_text, TIMESTAMP_FORMAT).replace(
            tzinfo=timezone.utc
        )
    except ValueError as exc:
        raise MalformedRecord(f"unparsable timestamp segment {ts_text!r}") from exc
    record = VehicleRecord(plate=plate, device_id=device_id, captured_at=captured_at)
    try:
        record.validate()
    except InvalidRecord as exc:
        raise MalformedRecord(str(exc)) from exc
    return record


def encode_payload(units: list[str]) -> Payload:
    """Concatenate 36-character units, in order, into one payload."""
    if not units:
        raise EmptyPayload("cannot build a payload from zero records")
    for unit in units:
        if len(unit) != RECORD_WIDTH:
            raise MalformedPayload(
                f"every unit must be {RECORD_WIDTH} chars, got {len(unit)}"
            )
    return Payload(text="".join(units))


def decode_payload(payload: Payload | str) -> list[str]:
    """Split a payload into its consecutive 36-character units."""
    text = payload.text if isinstance(payload, Payload) else payload
    if not text or len(text) % RECORD_WIDTH != 0:
        raise MalformedPayload(
            f"payload length {len(text)} is not a positive multiple of {RECORD_WIDTH}"
        )
    return [text[i : i + RECORD_WIDTH] for i in range(0, len(text), RECORD_WIDTH)]


def payload_byte_size(payload: Payload | str) -> int:
    """Accounting size of a payload: 4 bytes per character."""
    text = payload.text if isinstance(payload, Payload) else payload
    return 4 * len(text)
