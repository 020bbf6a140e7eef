"""UDP front end of the twin: a receiver thread feeding a single cycle worker.

Only one cycle is in flight.  Triggers that arrive while a cycle runs are
coalesced: the worker picks up the most recent one when it is free.
"""

from __future__ import annotations

import logging
import socket
import threading
from typing import Mapping, Optional

from .messages import MAX_DATAGRAM
from .orchestrator import MobilityTwin

log = logging.getLogger(__name__)


class TwinService:
    def __init__(self, twin: MobilityTwin, host: str = "127.0.0.1", port: int = 0,
                 endpoints: Optional[Mapping[str, tuple]] = None):
        self.twin = twin
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.05)
        self.address = self.sock.getsockname()
        self.endpoints = dict(endpoints or {})
        twin.send = self._send
        self._trigger = None
        self._cond = threading.Condition()
        self._busy = False
        self._stop = threading.Event()
        self.coalesced = 0
        self._rx = threading.Thread(target=self._receive, name="twin-rx", daemon=True)
        self._worker = threading.Thread(target=self._work, name="twin-cycle", daemon=True)
        self._ticker = None

    def _send(self, entity: str, data: bytes) -> None:
        addr = self.endpoints.get(entity)
        if addr is not None:
            self.sock.sendto(data, addr)

    def start(self) -> "TwinService":
        self._rx.start()
        self._worker.start()
        if self.twin.config.trigger == "periodic":
            self._ticker = threading.Thread(target=self._tick, name="twin-timer", daemon=True)
            self._ticker.start()
        return self

    def _receive(self):
        while not self._stop.is_set():
            try:
                raw, _ = self.sock.recvfrom(MAX_DATAGRAM + 1)
            except socket.timeout:
                continue
            except OSError:
                break
            got = self.twin.on_datagram(raw)
            if got is None:
                continue
            with self._cond:
                self._latest = got
                if self.twin.is_trigger(got[0]):
                    self._post(got)

    def _post(self, got):
        if self._trigger is not None or self._busy:
            self.coalesced += 1
        self._trigger = got
        self._cond.notify_all()

    def _tick(self):
        period = self.twin.config.period_ms / 1e3
        while not self._stop.wait(period):
            with self._cond:
                latest = getattr(self, "_latest", None)
                if latest is not None:
                    self._post(latest)

    def _work(self):
        while True:
            with self._cond:
                while self._trigger is None and not self._stop.is_set():
                    self._cond.wait(0.1)
                if self._trigger is None:
                    return
                got, self._trigger = self._trigger, None
                self._busy = True
            try:
                self.twin.run_cycle(*got)
            except Exception:
                log.exception("prediction cycle crashed")
            finally:
                with self._cond:
                    self._busy = False
                    self._cond.notify_all()

    def wait_idle(self, timeout: float = 10.0) -> bool:
        """Block until no cycle is running or queued."""
        with self._cond:
            return self._cond.wait_for(lambda: self._trigger is None and not self._busy, timeout)

    def close(self):
        self._stop.set()
        with self._cond:
            self._cond.notify_all()
        for t in (self._rx, self._worker, self._ticker):
            if t is not None and t.is_alive():
                t.join(timeout=5.0)
        self.sock.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()
