"""Microsecond clocks: the host monotonic clock and a manually driven virtual one."""

from __future__ import annotations

import threading
import time


class MonotonicClock:
    """Single-host clock; ``sleep_us`` really sleeps."""

    def now_us(self) -> int:
        return time.monotonic_ns() // 1000

    def sleep_us(self, us: float) -> None:
        if us > 0:
            time.sleep(us / 1e6)


class VirtualClock:
    """Deterministic clock for tests; sleeping just advances time."""

    def __init__(self, start_us: int = 0):
        self._now = int(start_us)
        self._lock = threading.Lock()

    def now_us(self) -> int:
        with self._lock:
            return self._now

    def sleep_us(self, us: float) -> None:
        self.advance_us(us)

    def advance_us(self, us: float) -> None:
        if us < 0:
            raise ValueError("virtual time cannot go backwards")
        with self._lock:
            self._now += int(round(us))

    def set_us(self, t_us: int) -> None:
        with self._lock:
            if t_us < self._now:
                raise ValueError("virtual time cannot go backwards")
            self._now = int(t_us)
