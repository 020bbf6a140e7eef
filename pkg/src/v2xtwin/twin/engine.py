"""Channel engines the twin can query: in-process, mock, and over UDP."""

from __future__ import annotations

import logging
import socket
import threading
from typing import Mapping, Optional, Protocol

from ..channel.detail import detail_index
from ..channel.links import predict_links
from ..scene.model import Pose, Scene, assemble_scene
from .clock import MonotonicClock
from .messages import MAX_DATAGRAM, MessageError, decode, encode, link_entry, prediction_response

log = logging.getLogger(__name__)


class EngineError(RuntimeError):
    pass


class ChannelEngine(Protocol):
    def handle(self, request: dict) -> dict:
        """Answer one predict request with a prediction response."""


class LocalEngine:
    """Assembles the scene at the requested poses and predicts every link.

    ``tau_rt_ms`` covers scene assembly and path computation, measured with
    ``clock`` so that a virtual clock reports zero.
    """

    def __init__(self, scene: Scene, tx_power_dbm: float, mode: str = "coherent",
                 ray_cap: Optional[int] = None, seed: int = 0, clock=None):
        self.scene = scene
        self.tx_power_dbm = tx_power_dbm
        self.mode = mode
        self.ray_cap = ray_cap
        self.seed = seed
        self.clock = clock or MonotonicClock()

    def handle(self, request: dict) -> dict:
        t0 = self.clock.now_us()
        poses, templates, fixed = {}, {}, {}
        for p in request["poses"]:
            pose = Pose(float(p["x"]), float(p["y"]), float(p["z"]), float(p["yaw"]))
            if p.get("template"):
                poses[p["entity_id"]] = pose
                templates[p["entity_id"]] = p["template"]
            else:
                fixed[p["entity_id"]] = (pose.x, pose.y, pose.z)
        scene = assemble_scene(self.scene, poses, templates, fixed)
        links = [tuple(l) for l in request["links"]]
        pred = predict_links(scene, links, detail_index(request["di"], self.ray_cap),
                             self.tx_power_dbm, self.seed, self.mode)
        entries = [link_entry(a, b, r.rssi_dbm, r.los, r.n_paths, r.delay_spread)
                   for (a, b), r in pred.realizations.items()]
        tau_rt_ms = (self.clock.now_us() - t0) / 1e3
        return prediction_response(request["request_id"], request["t_target_us"], entries, tau_rt_ms)


class MockEngine:
    """Zero-physics engine that costs a fixed time; links come back empty."""

    def __init__(self, cost_ms: float = 0.0, clock=None):
        self.cost_ms = cost_ms
        self.clock = clock or MonotonicClock()

    def handle(self, request: dict) -> dict:
        t0 = self.clock.now_us()
        self.clock.sleep_us(self.cost_ms * 1e3)
        entries = [link_entry(a, b, float("-inf"), False, 0, 0.0) for a, b in request["links"]]
        return prediction_response(request["request_id"], request["t_target_us"], entries,
                                   (self.clock.now_us() - t0) / 1e3)


class EngineServer:
    """Serves an engine on a UDP socket from a background thread."""

    def __init__(self, engine: ChannelEngine, host: str = "127.0.0.1", port: int = 0):
        self.engine = engine
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.1)
        self.address = self.sock.getsockname()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, name="engine-server", daemon=True)
        self.errors = 0

    def start(self) -> "EngineServer":
        self._thread.start()
        return self

    def _serve(self):
        while not self._stop.is_set():
            try:
                raw, peer = self.sock.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            req: dict = {}
            try:
                req = decode(raw)
                if req.get("type") != "predict":
                    raise MessageError("not a predict request")
                resp = self.engine.handle(req)
            except Exception as exc:  # the server must survive any bad request
                self.errors += 1
                log.warning("engine request failed: %s", exc)
                resp = prediction_response(str(req.get("request_id", "")), 0, [], 0.0, error=str(exc))
            try:
                self.sock.sendto(encode(resp), peer)
            except (OSError, MessageError) as exc:
                self.errors += 1
                log.warning("engine response not sent: %s", exc)

    def close(self):
        self._stop.set()
        self._thread.join(timeout=2.0)
        self.sock.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


class UdpEngine:
    """Client side of :class:`EngineServer`."""

    def __init__(self, address, timeout_s: float = 5.0):
        self.address = tuple(address)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.settimeout(timeout_s)

    def handle(self, request: dict) -> dict:
        try:
            self.sock.sendto(encode(request), self.address)
            while True:
                raw, _ = self.sock.recvfrom(MAX_DATAGRAM)
                resp = decode(raw)
                if resp.get("request_id") == request["request_id"]:
                    break
        except socket.timeout:
            raise EngineError(f"no response to {request['request_id']}") from None
        except (OSError, MessageError) as exc:
            raise EngineError(str(exc)) from None
        if "error" in resp:
            raise EngineError(resp["error"])
        return resp

    def close(self):
        self.sock.close()
