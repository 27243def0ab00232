"""Deterministic synthetic capture feeds for tests and benchmarks."""

from __future__ import annotations

import random
import string
from datetime import datetime, timedelta, timezone

from .records import VehicleRecord

DEFAULT_WINDOW_START = datetime(2024, 5, 1, 0, 0, 0, tzinfo=timezone.utc)
DEFAULT_WINDOW_S = 3600
DEFAULT_DEVICE_POOL = 10

_LETTERS = string.ascii_uppercase
_DIGITS = string.digits


def device_pool(size: int = DEFAULT_DEVICE_POOL) -> list[str]:
    return [f"CAM{i:03d}" for i in range(size)]


def gen_records(
    n: int,
    seed: int,
    devices: int = DEFAULT_DEVICE_POOL,
    window_start: datetime = DEFAULT_WINDOW_START,
    window_s: int = DEFAULT_WINDOW_S,
) -> list[VehicleRecord]:
    """Generate ``n`` valid records, identically for identical arguments.

    Device IDs come from a small pool so filters select nontrivial subsets;
    capture times are spread over the window at whole-second resolution.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = random.Random(seed)
    pool = device_pool(devices)
    out = []
    for _ in range(n):
        plate = "{}{}-{}{}-{}{}".format(
            rng.choice(_LETTERS),
            rng.choice(_LETTERS),
            rng.choice(_DIGITS),
            rng.choice(_DIGITS),
            rng.choice(_LETTERS),
            rng.choice(_LETTERS),
        )
        captured_at = window_start + timedelta(seconds=rng.randint(0, window_s))
        out.append(VehicleRecord(plate, rng.choice(pool), captured_at))
    return out
