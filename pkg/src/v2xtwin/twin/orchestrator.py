"""The mobility twin loop: fuse reports, forecast, query the channel engine, dispatch.

Each cycle targets one instant ``t_target = t_meas + h`` of the triggering
report.  Stage timestamps are taken back to back so the latency components
add up to the measured end-to-end time:

* sensing delay ``m``: report send time minus acquisition time
* wire delay ``w``: receive time minus send time; the downlink is assumed
  symmetric, so completion is dispatch time plus ``w``
* processing ``tp``: everything in the twin outside the engine round trip
* request ``req``: half of the engine round trip not spent computing
* ``rt``: the engine's own computation time
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from ..channel.bias import DEFAULT_ALPHA, BiasTracker
from ..mobility import KalmanModel, Measurement, Tracker
from ..scene.model import Pose
from .clock import MonotonicClock
from .latency import LatencyBreakdown, deadline_met
from .messages import (
    EntityReport,
    IngestStats,
    MessageError,
    control_message,
    encode,
    ingest_report,
    parse_links,
    pose_entry,
    predict_request,
)

log = logging.getLogger(__name__)

PENDING, DELIVERED, STALE, FAILED = "pending", "delivered", "stale_discarded", "failed"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StageDelays:
    """Artificial delays (ms) inserted at stage boundaries, for emulation and tests."""

    tau_tp: float = 0.0
    tau_req: float = 0.0


@dataclass(frozen=True)
class TwinConfig:
    h_ms: float = 500.0
    dt_pe_ms: float = 100.0
    di: int = 2
    trigger: str = "on_report"
    period_ms: float = 100.0
    ego: Optional[str] = None
    tx_power_dbm: float = 10.0
    links: tuple = ()
    # entity -> vehicle template; None places a bare antenna at the reported pose
    templates: Mapping[str, Optional[str]] = field(default_factory=dict)
    skew_bound_ms: float = 100.0
    tau_m_ms: float = 8.9
    delays: StageDelays = StageDelays()
    bias_alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.h_ms > 0:
            raise ConfigError("h must be positive")
        if not self.dt_pe_ms > 0:
            raise ConfigError("reporting period must be positive")
        if self.trigger not in ("on_report", "periodic"):
            raise ConfigError(f"unknown trigger policy {self.trigger!r}")
        object.__setattr__(self, "links", tuple((str(a), str(b)) for a, b in self.links))


@dataclass
class PredictionEnvelope:
    request_id: str
    t_now_us: int
    t_target_us: int
    h_ms: float
    di: int
    poses: dict
    status: str = PENDING
    breakdown: Optional[LatencyBreakdown] = None
    links: list = field(default_factory=list)
    completion_us: Optional[int] = None
    error: Optional[str] = None

    def __post_init__(self):
        if not self.t_target_us > self.t_now_us:
            raise ValueError("t_target must lie after t_now")

    def finish(self, status: str) -> None:
        if self.status != PENDING:
            raise RuntimeError(f"envelope {self.request_id} already {self.status}")
        if status not in (DELIVERED, STALE, FAILED):
            raise ValueError(f"invalid final status {status!r}")
        self.status = status

    def to_record(self) -> dict:
        return {
            "request_id": self.request_id,
            "status": self.status,
            "t_now_us": self.t_now_us,
            "t_target_us": self.t_target_us,
            "completion_us": self.completion_us,
            "h_ms": self.h_ms,
            "di": self.di,
            "poses": self.poses,
            "links": [{k: _json_num(v) for k, v in l.items()} for l in self.links],
            "latency": self.breakdown.to_dict() if self.breakdown else None,
            "error": self.error,
        }


def _json_num(x):
    return None if isinstance(x, float) and x == float("-inf") else x


def deadline_check(envelope: PredictionEnvelope, completion_us: int) -> str:
    return DELIVERED if deadline_met(envelope.t_target_us, completion_us) else STALE


@dataclass
class CycleResult:
    envelope: PredictionEnvelope
    outbound: list  # (entity_id, message dict)


class MobilityTwin:
    """Tracker state plus the prediction cycle.

    ``send(entity_id, datagram)`` delivers control messages; it may raise
    OSError, which is counted.  ``event_log`` receives one JSON line per
    envelope.
    """

    def __init__(self, config: TwinConfig, engine, clock=None,
                 send: Optional[Callable[[str, bytes], None]] = None, event_log=None):
        self.config = config
        self.engine = engine
        self.clock = clock or MonotonicClock()
        self.send = send
        self.event_log = event_log
        self.model = KalmanModel(dt=config.dt_pe_ms / 1e3)
        self.trackers: dict[str, Tracker] = {}
        self.bias = BiasTracker(config.bias_alpha)
        self.stats = IngestStats()
        self.counts = {DELIVERED: 0, STALE: 0, FAILED: 0}
        self.envelopes: list[PredictionEnvelope] = []
        self.send_errors = 0
        self._raw_predictions: dict[int, dict] = {}
        self._lock = threading.Lock()
        self._seq = 0

    # ingestion

    def on_datagram(self, raw: bytes) -> Optional[tuple[EntityReport, int]]:
        """Validate and fuse one report; returns it with its receive time."""
        t_recv = self.clock.now_us()
        report = ingest_report(raw, t_recv, int(self.config.skew_bound_ms * 1e3), self.stats)
        if report is None:
            return None
        self.fuse(report)
        return report, t_recv

    def fuse(self, report: EntityReport) -> None:
        p = report.pose
        m = Measurement(report.entity_id, report.t_meas_us / 1e6, (p.x, p.y), p.yaw, p.z)
        with self._lock:
            tr = self.trackers.get(report.entity_id)
            if tr is None:
                tr = self.trackers[report.entity_id] = Tracker(report.entity_id, self.model)
            tr.ingest(m)
            self._record_residuals(report)

    def _record_residuals(self, report: EntityReport) -> None:
        if not report.rssi:
            return
        tol = self.config.dt_pe_ms * 1e3 / 2
        match = [t for t in self._raw_predictions if abs(t - report.t_meas_us) <= tol]
        if not match:
            return
        raw = self._raw_predictions[min(match, key=lambda t: abs(t - report.t_meas_us))]
        for m in report.rssi:
            if m.link in raw:
                self.bias.record(m.link, m.dbm, raw[m.link])
        # predictions older than this report can no longer be matched
        for t in [t for t in self._raw_predictions if t < report.t_meas_us - tol]:
            del self._raw_predictions[t]

    def is_trigger(self, report: EntityReport) -> bool:
        if self.config.trigger != "on_report":
            return False
        return self.config.ego is None or report.entity_id == self.config.ego

    # prediction cycle

    def run_cycle(self, report: EntityReport, t_recv_us: int) -> CycleResult:
        cfg = self.config
        clock = self.clock
        tau_m = (report.t_send_us - report.t_meas_us) / 1e3 if report.t_send_us is not None else cfg.tau_m_ms
        t_send_us = report.t_send_us if report.t_send_us is not None else report.t_meas_us + int(round(cfg.tau_m_ms * 1e3))
        tau_w = max(0.0, (t_recv_us - t_send_us) / 1e3)

        self._seq += 1
        request_id = f"r{self._seq:06d}"
        t_now = report.t_meas_us
        t_target = t_now + int(round(cfg.h_ms * 1e3))
        with self._lock:
            if not self.trackers:
                raise RuntimeError("run_cycle needs at least one tracked entity")
            forecasts = {e: tr.forecast(cfg.h_ms / 1e3, t_now / 1e6) for e, tr in sorted(self.trackers.items())}
        poses = []
        for e, fc in forecasts.items():
            template = cfg.templates.get(e)
            poses.append(pose_entry(e, template, fc.pose))
        env = PredictionEnvelope(request_id, t_now, t_target, cfg.h_ms, cfg.di,
                                 {e: _pose_dict(fc.pose) for e, fc in forecasts.items()})
        clock.sleep_us(cfg.delays.tau_tp * 1e3)

        request = predict_request(request_id, t_target, cfg.di, poses, list(cfg.links))
        t_req = clock.now_us()
        try:
            clock.sleep_us(cfg.delays.tau_req * 1e3)
            response = self.engine.handle(request)
            clock.sleep_us(cfg.delays.tau_req * 1e3)
            links = parse_links(response["links"])
            tau_rt = float(response["tau_rt_ms"])
        except Exception as exc:  # engine failure must not stop the loop
            log.warning("%s: channel engine failed: %s", request_id, exc)
            env.error = str(exc)
            env.finish(FAILED)
            self.counts[FAILED] += 1
            self._log(env)
            self.envelopes.append(env)
            return CycleResult(env, [])
        t_resp = clock.now_us()

        raw = {}
        for l in links:
            raw[(l["a"], l["b"])] = l["rssi_dbm"]
            l["rssi_raw_dbm"] = l["rssi_dbm"]
            l["rssi_dbm"] = self.bias.correct((l["a"], l["b"]), l["rssi_dbm"])
        with self._lock:
            self._raw_predictions[t_target] = raw
        env.links = links

        t_dispatch = clock.now_us()
        tau_req = max(0.0, ((t_resp - t_req) / 1e3 - tau_rt) / 2)
        tau_tp = ((t_req - t_recv_us) + (t_dispatch - t_resp)) / 1e3
        completion = t_dispatch + int(round(tau_w * 1e3))
        env.completion_us = completion
        env.breakdown = LatencyBreakdown(tau_m, tau_w, tau_tp, tau_req, tau_rt,
                                         (completion - report.t_meas_us) / 1e3, cfg.di)
        env.finish(deadline_check(env, completion))
        self.counts[env.status] += 1

        outbound = []
        if env.status == DELIVERED:
            outbound = self._control_messages(env)
            for entity, msg in outbound:
                self._send(entity, msg)
        else:
            log.info("%s: completed %.1f ms after target, discarded", request_id,
                     (completion - t_target) / 1e3)
        self._log(env)
        self.envelopes.append(env)
        return CycleResult(env, outbound)

    def _control_messages(self, env: PredictionEnvelope) -> list:
        involved = sorted({e for l in env.links for e in (l["a"], l["b"])})
        out = []
        t_emit = self.clock.now_us()
        for entity in involved:
            mine = [{"a": l["a"], "b": l["b"], "rssi_dbm": _json_num(l["rssi_dbm"]), "los": l["los"]}
                    for l in env.links if entity in (l["a"], l["b"])]
            out.append((entity, control_message(entity, env.t_target_us, mine, t_emit, env.request_id)))
        return out

    def _send(self, entity: str, msg: dict) -> None:
        if self.send is None:
            return
        try:
            self.send(entity, encode(msg))
        except (OSError, MessageError) as exc:
            self.send_errors += 1
            log.debug("control to %s not sent: %s", entity, exc)

    def _log(self, env: PredictionEnvelope) -> None:
        if self.event_log is not None:
            self.event_log.write(json.dumps(env.to_record(), sort_keys=True) + "\n")

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def _pose_dict(p: Pose) -> dict:
    return {"x": p.x, "y": p.y, "z": p.z, "yaw": p.yaw}
