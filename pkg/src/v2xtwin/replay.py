"""Scenario replay over UDP loopback.

Simulated entities report their true poses every reporting period together
with a synthetic "measured" RSSI: the channel engine evaluated at the true
poses plus Gaussian noise.  The twin predicts the channel at ``t + h`` from
the reports; each prediction is scored against the synthetic measurement at
the target tick.

Sensing instants are scheduled exactly on the tick grid, so everything the
twin computes depends only on the scenario and seed.  Wall-clock latency is
written to separate files.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import socket
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .channel.detail import detail_index
from .channel.links import realize_link
from .scenario import Scenario, place
from .twin.clock import MonotonicClock
from .twin.engine import EngineServer, LocalEngine, MockEngine, UdpEngine
from .twin.latency import latency_report, nearest_rank, write_latency_report
from .twin.messages import EntityReport, LinkMeasurement, encode, MAX_DATAGRAM
from .twin.orchestrator import DELIVERED, FAILED, STALE, MobilityTwin, StageDelays, TwinConfig
from .twin.service import TwinService

log = logging.getLogger(__name__)

PREDICTION_COLUMNS = ("tick", "target_tick", "link_a", "link_b", "status", "predicted_rssi_dbm",
                      "corrected_rssi_dbm", "measured_rssi_dbm", "error_db", "predicted_los", "true_los")
START_DELAY_US = 200_000


@dataclass
class RunReport:
    total: int = 0
    delivered: int = 0
    stale: int = 0
    failed: int = 0
    coalesced: int = 0
    ticks: int = 0
    reports_sent: int = 0
    controls_received: int = 0
    malformed: int = 0
    skewed: int = 0
    compared: int = 0
    mean_abs_error_db: Optional[float] = None
    p95_abs_error_db: Optional[float] = None
    latency: list = field(default_factory=list)
    outputs: dict = field(default_factory=dict)

    @property
    def delivered_fraction(self) -> float:
        return self.delivered / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["delivered_fraction"] = self.delivered_fraction
        return d


@dataclass(frozen=True)
class ReplayOptions:
    seed: int = 0
    di: Optional[int] = None
    h_ms: Optional[float] = None
    dt_pe_ms: Optional[float] = None
    duration_s: Optional[float] = None
    mode: Optional[str] = None
    engine: str = "udp"  # udp | local | mock
    mock_cost_ms: float = 0.0
    noise_db: Optional[float] = None
    truth_di: Optional[int] = None
    ray_cap: Optional[int] = None
    tau_tp_ms: float = 0.0


class _Truth:
    """True poses and synthetic measurements on the tick grid."""

    def __init__(self, scenario: Scenario, n_ticks: int, dt: float, di: int, noise_db: float,
                 seed: int, tx_power: float, mode: str, ray_cap):
        scene = scenario.scene()
        rng = np.random.default_rng(seed)
        cfg = detail_index(di, ray_cap)
        self.frames = [scenario.frame(i * dt) for i in range(n_ticks)]
        self.rssi: list[dict] = []
        self.los: list[dict] = []
        for frame in self.frames:
            placed = place(scene, frame, scenario.templates)
            r_tick, l_tick = {}, {}
            for link in scenario.links:
                real = realize_link(placed, link, cfg, tx_power, seed, mode)
                noise = rng.normal(0.0, noise_db) if noise_db > 0 else 0.0
                r_tick[link] = real.rssi_dbm + noise
                l_tick[link] = real.los
            self.rssi.append(r_tick)
            self.los.append(l_tick)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_replay(scenario: Scenario, out_dir, opts: ReplayOptions = ReplayOptions()) -> RunReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ts = scenario.twin
    di = opts.di or ts.di
    h_ms = opts.h_ms or ts.h_ms
    dt_ms = opts.dt_pe_ms or ts.dt_pe_ms
    duration = scenario.duration_s if opts.duration_s is None else opts.duration_s
    mode = opts.mode or ts.mode
    noise = ts.noise_db if opts.noise_db is None else opts.noise_db
    truth_di = opts.truth_di or ts.truth_di or di
    n_ticks = int(math.floor(duration * 1e3 / dt_ms + 1e-9))
    report = RunReport(ticks=n_ticks)
    paths = {
        "events": out / "events.jsonl",
        "predictions": out / "predictions.csv",
        "latency": out / "latency.csv",
        "latency_summary": out / "latency_summary.csv",
        "report": out / "run_report.json",
    }
    report.outputs = {k: str(v) for k, v in paths.items()}
    if n_ticks == 0:
        _write_outputs(paths, report, [], [], None)
        return report

    truth = _Truth(scenario, n_ticks, dt_ms / 1e3, truth_di, noise, opts.seed,
                   ts.tx_power_dbm, mode, opts.ray_cap)
    clock = MonotonicClock()
    config = TwinConfig(
        h_ms=h_ms, dt_pe_ms=dt_ms, di=di, ego=scenario.ego or scenario.entity_ids[-1],
        tx_power_dbm=ts.tx_power_dbm, links=scenario.links, templates=scenario.templates,
        tau_m_ms=ts.tau_m_ms, delays=StageDelays(tau_tp=opts.tau_tp_ms),
    )
    server = client = None
    if opts.engine == "mock":
        engine = MockEngine(opts.mock_cost_ms, clock)
    else:
        local = LocalEngine(scenario.scene(), ts.tx_power_dbm, mode, opts.ray_cap, opts.seed, clock)
        if opts.engine == "udp":
            server = EngineServer(local).start()
            engine = client = UdpEngine(server.address, timeout_s=max(5.0, 4 * h_ms / 1e3))
        else:
            engine = local

    sim = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sim.bind(("127.0.0.1", 0))
    sim.settimeout(0.05)
    sim_addr = sim.getsockname()
    controls = []
    stop = threading.Event()

    def listen():
        while not stop.is_set():
            try:
                raw, _ = sim.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            controls.append(raw)

    ego = config.ego
    order = [e for e in scenario.entity_ids if e != ego] + [ego]
    with open(paths["events"], "w") as events:
        twin = MobilityTwin(config, engine, clock, event_log=events)
        service = TwinService(twin, endpoints={e: sim_addr for e in scenario.entity_ids})
        listener = threading.Thread(target=listen, name="entity-control-rx", daemon=True)
        try:
            service.start()
            listener.start()
            t0 = clock.now_us() + START_DELAY_US
            dt_us = int(round(dt_ms * 1e3))
            tau_m_us = int(round(ts.tau_m_ms * 1e3))
            for k in range(n_ticks):
                t_meas = t0 + k * dt_us
                clock.sleep_us(t_meas + tau_m_us - clock.now_us())
                frame = truth.frames[k]
                for e in order:
                    spec = scenario.entity(e)
                    meas = tuple(LinkMeasurement(l, truth.rssi[k][l]) for l in scenario.links if l[0] == e)
                    rep = EntityReport(e, t_meas, frame[e], spec.speed_at(k * dt_ms / 1e3), meas,
                                       t_send_us=clock.now_us())
                    sim.sendto(encode(rep.to_json()), service.address)
                    report.reports_sent += 1
            service.wait_idle(timeout=max(10.0, 4 * h_ms / 1e3))
            clock.sleep_us(50_000)
        finally:
            service.close()
            stop.set()
            listener.join(timeout=2.0)
            sim.close()
            if client is not None:
                client.close()
            if server is not None:
                server.close()

    report.total = twin.total
    report.delivered = twin.counts[DELIVERED]
    report.stale = twin.counts[STALE]
    report.failed = twin.counts[FAILED]
    report.coalesced = service.coalesced
    report.controls_received = len(controls)
    report.malformed = twin.stats.malformed
    report.skewed = twin.stats.skewed
    _write_outputs(paths, report, twin.envelopes, [t0, dt_us], truth)
    return report


def _write_outputs(paths, report: RunReport, envelopes, grid, truth: Optional[_Truth]) -> None:
    errors = []
    with open(paths["predictions"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for env in envelopes:
            t0, dt_us = grid
            tick = int(round((env.t_now_us - t0) / dt_us))
            target = int(round((env.t_target_us - t0) / dt_us))
            in_range = truth is not None and 0 <= target < len(truth.rssi)
            for l in env.links:
                link = (l["a"], l["b"])
                measured = truth.rssi[target][link] if in_range else math.nan
                true_los = truth.los[target][link] if in_range else ""
                corrected = l["rssi_dbm"]
                err = corrected - measured if (math.isfinite(corrected) and math.isfinite(measured)) else math.nan
                if env.status == DELIVERED and math.isfinite(err):
                    errors.append(abs(err))
                w.writerow([tick, target, link[0], link[1], env.status, _fmt(l["rssi_raw_dbm"]),
                            _fmt(corrected), _fmt(measured), _fmt(err), l["los"], true_los])
    if errors:
        report.compared = len(errors)
        report.mean_abs_error_db = float(np.mean(errors))
        report.p95_abs_error_db = float(nearest_rank(errors, 0.95))
    history = [e.breakdown for e in envelopes if e.breakdown is not None]
    with open(paths["latency"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("request_id", "status", "tau_m", "tau_w", "tau_tp", "tau_req", "tau_rt", "tau_e2e"))
        for e in envelopes:
            b = e.breakdown
            if b is not None:
                w.writerow([e.request_id, e.status, b.tau_m, b.tau_w, b.tau_tp, b.tau_req, b.tau_rt, b.tau_e2e])
    rows = latency_report(history)
    report.latency = rows
    write_latency_report(rows, paths["latency_summary"])
    with open(paths["report"], "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
