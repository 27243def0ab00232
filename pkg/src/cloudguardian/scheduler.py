"""Periodic anchoring driven by an injectable clock.

The first anchor fires one full interval after start. Ticks never overlap:
when an anchor runs past its next deadline the following tick is delayed,
not doubled. A tick that finds nothing to anchor is logged and skipped;
any other per-tick error is recorded and the loop keeps going.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field

from .engine import NothingToAnchor, SyncEngine

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TickResult:
    at: float
    status: str  # "anchored" | "skipped" | "error"
    detail: str = ""


@dataclass
class SchedulerLog:
    ticks: list[TickResult] = field(default_factory=list)

    def count(self, status: str) -> int:
        return sum(1 for t in self.ticks if t.status == status)

    @property
    def anchors(self) -> int:
        return self.count("anchored")

    @property
    def skips(self) -> int:
        return self.count("skipped")

    @property
    def errors(self) -> int:
        return self.count("error")


class Scheduler:
    """Runs ``engine.anchor(protocol)`` every ``interval_s`` seconds.

    ``monotonic`` and ``sleep`` are injectable so tests can drive the loop
    with a simulated clock; the defaults wire up the real time module. The
    production path is ``start()``/``stop()`` with a background thread;
    ``run()`` is the blocking loop underneath.
    """

    def __init__(
        self,
        engine: SyncEngine,
        protocol: str,
        interval_s: float,
        monotonic=time.monotonic,
        sleep=None,
    ):
        if interval_s <= 0:
            raise ValueError("interval must be positive")
        self.engine = engine
        self.protocol = protocol
        self.interval_s = interval_s
        self.log = SchedulerLog()
        self._monotonic = monotonic
        self._stop_event = threading.Event()
        self._sleep = sleep or (lambda seconds: self._stop_event.wait(seconds))
        self._thread: threading.Thread | None = None

    def run(self, should_stop=None) -> None:
        """Blocking tick loop; returns when ``should_stop()`` turns true."""
        should_stop = should_stop or self._stop_event.is_set
        deadline = self._monotonic() + self.interval_s
        while not should_stop():
            now = self._monotonic()
            if now < deadline:
                self._sleep(deadline - now)
                continue
            self._tick(now)
            deadline = max(deadline + self.interval_s, self._monotonic())

    def start(self) -> None:
        if self._thread is not None:
            raise RuntimeError("scheduler already started")
        self._stop_event.clear()
        self._thread = threading.Thread(target=self.run, daemon=True, name="anchor-scheduler")
        self._thread.start()

    def stop(self) -> None:
        self._stop_event.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def _tick(self, now: float) -> None:
        try:
            outcome = self.engine.anchor(self.protocol)
            self.log.ticks.append(
                TickResult(now, "anchored", f"{outcome.records_anchored} records")
            )
        except NothingToAnchor:
            logger.info("scheduled anchor skipped: nothing to anchor")
            self.log.ticks.append(TickResult(now, "skipped", "nothing to anchor"))
        except Exception as exc:
            logger.warning("scheduled anchor failed: %s", exc)
            self.log.ticks.append(TickResult(now, "error", str(exc)))
