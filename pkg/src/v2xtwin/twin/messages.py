"""UDP/JSON wire messages: entity reports, predict requests and responses, control.

Every datagram is one UTF-8 JSON object with a ``type`` field.  Reports may
carry an optional ``t_send_us`` so the receiver can split sensing delay from
uplink delay; outbound messages carry ``t_emit_us``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

from ..scene.model import Pose

log = logging.getLogger(__name__)

MAX_DATAGRAM = 65536


class MessageError(ValueError):
    pass


@dataclass(frozen=True)
class LinkMeasurement:
    link: tuple[str, str]
    dbm: float


@dataclass(frozen=True)
class EntityReport:
    entity_id: str
    t_meas_us: int
    pose: Pose
    speed: float
    rssi: tuple[LinkMeasurement, ...] = ()
    t_send_us: Optional[int] = None

    def to_json(self) -> dict:
        doc = {
            "type": "report",
            "entity_id": self.entity_id,
            "t_meas_us": self.t_meas_us,
            "pose": {"x": self.pose.x, "y": self.pose.y, "z": self.pose.z, "yaw": self.pose.yaw},
            "speed": self.speed,
            "rssi": [{"link": list(m.link), "dbm": _num_out(m.dbm)} for m in self.rssi],
        }
        if self.t_send_us is not None:
            doc["t_send_us"] = self.t_send_us
        return doc


@dataclass
class IngestStats:
    received: int = 0
    accepted: int = 0
    malformed: int = 0
    skewed: int = 0
    oversized: int = 0
    socket_errors: int = 0


def encode(doc: dict) -> bytes:
    data = json.dumps(doc, separators=(",", ":"), allow_nan=False).encode("utf-8")
    if len(data) > MAX_DATAGRAM:
        raise MessageError(f"message of {len(data)} bytes exceeds one datagram")
    return data


def decode(raw: bytes) -> dict:
    if len(raw) > MAX_DATAGRAM:
        raise MessageError("datagram larger than 64 KiB")
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MessageError(f"malformed datagram: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("type"), str):
        raise MessageError("datagram is not a typed JSON object")
    return doc


def _num_out(x: float):
    # JSON has no infinities: -inf RSSI travels as null
    return x if math.isfinite(x) else None


def _num_in(x, what: str) -> float:
    if x is None:
        return -math.inf
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise MessageError(f"{what} must be a number")
    return float(x)


def _int(doc: dict, key: str) -> int:
    v = doc.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise MessageError(f"{key} must be an integer")
    return v


def _float(doc: dict, key: str) -> float:
    v = doc.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise MessageError(f"{key} must be a finite number")
    return float(v)


def _link(v) -> tuple[str, str]:
    if not isinstance(v, list) or len(v) != 2 or not all(isinstance(e, str) for e in v):
        raise MessageError("link must be a pair of entity ids")
    return v[0], v[1]


def parse_report(doc: dict) -> EntityReport:
    if doc.get("type") != "report":
        raise MessageError("not a report")
    eid = doc.get("entity_id")
    if not isinstance(eid, str) or not eid:
        raise MessageError("entity_id must be a non-empty string")
    pose = doc.get("pose")
    if not isinstance(pose, dict):
        raise MessageError("pose must be an object")
    rssi = doc.get("rssi", [])
    if not isinstance(rssi, list):
        raise MessageError("rssi must be a list")
    meas = []
    for item in rssi:
        if not isinstance(item, dict):
            raise MessageError("rssi entries must be objects")
        meas.append(LinkMeasurement(_link(item.get("link")), _num_in(item.get("dbm"), "dbm")))
    t_send = doc.get("t_send_us")
    if t_send is not None:
        t_send = _int(doc, "t_send_us")
    return EntityReport(
        entity_id=eid,
        t_meas_us=_int(doc, "t_meas_us"),
        pose=Pose(_float(pose, "x"), _float(pose, "y"), _float(pose, "z"), _float(pose, "yaw")),
        speed=_float(doc, "speed"),
        rssi=tuple(meas),
        t_send_us=t_send,
    )


def ingest_report(raw: bytes, now_us: int, skew_bound_us: int,
                  stats: Optional[IngestStats] = None) -> Optional[EntityReport]:
    """Parse one report datagram; bad or future-dated reports are counted and dropped."""
    stats = stats if stats is not None else IngestStats()
    stats.received += 1
    if len(raw) > MAX_DATAGRAM:
        stats.oversized += 1
        return None
    try:
        report = parse_report(decode(raw))
    except MessageError as exc:
        stats.malformed += 1
        log.debug("dropping datagram: %s", exc)
        return None
    if report.t_meas_us > now_us + skew_bound_us:
        stats.skewed += 1
        log.debug("dropping report from %s: %d us in the future", report.entity_id,
                  report.t_meas_us - now_us)
        return None
    stats.accepted += 1
    return report


def pose_entry(entity_id: str, template: Optional[str], pose: Pose) -> dict:
    return {"entity_id": entity_id, "template": template,
            "x": pose.x, "y": pose.y, "z": pose.z, "yaw": pose.yaw}


def predict_request(request_id: str, t_target_us: int, di: int, poses: list[dict],
                    links: list[tuple[str, str]]) -> dict:
    return {"type": "predict", "request_id": request_id, "t_target_us": t_target_us, "di": di,
            "poses": poses, "links": [list(l) for l in links]}


def link_entry(a: str, b: str, rssi_dbm: float, los: bool, n_paths: int, delay_spread_s: float) -> dict:
    return {"a": a, "b": b, "rssi_dbm": _num_out(rssi_dbm), "los": bool(los),
            "n_paths": int(n_paths), "delay_spread_s": float(delay_spread_s)}


def prediction_response(request_id: str, t_target_us: int, links: list[dict], tau_rt_ms: float,
                        error: Optional[str] = None) -> dict:
    doc = {"type": "prediction", "request_id": request_id, "t_target_us": t_target_us,
           "links": links, "tau_rt_ms": float(tau_rt_ms)}
    if error is not None:
        doc["error"] = error
    return doc


def control_message(entity_id: str, t_target_us: int, links: list[dict], t_emit_us: int,
                    request_id: str) -> dict:
    return {"type": "control", "entity_id": entity_id, "t_target_us": t_target_us,
            "links": links, "t_emit_us": t_emit_us, "request_id": request_id}


def parse_links(links: list) -> list[dict]:
    """Validate the link list of a prediction/control message; null RSSI becomes -inf."""
    out = []
    for item in links:
        if not isinstance(item, dict):
            raise MessageError("link entries must be objects")
        out.append({
            "a": str(item["a"]), "b": str(item["b"]),
            "rssi_dbm": _num_in(item.get("rssi_dbm"), "rssi_dbm"),
            "los": bool(item.get("los", False)),
            "n_paths": int(item.get("n_paths", 0)),
            "delay_spread_s": float(item.get("delay_spread_s", 0.0)),
        })
    return out
