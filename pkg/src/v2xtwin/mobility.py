"""Constant-velocity Kalman tracking and fixed-horizon pose forecasts.

The filter state is (px, py, vx, vy).  Heading is not filtered: it is read
off the velocity when the vehicle moves faster than ``HEADING_MIN_SPEED`` and
held otherwise, which keeps the model linear.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .scene.model import Pose, normalize_yaw

log = logging.getLogger(__name__)

HEADING_MIN_SPEED = 0.05  # m/s
COND_LIMIT = 1e12
PSD_TOL = 1e-9


class DegradedUpdateError(RuntimeError):
    """Innovation covariance too ill-conditioned to invert; keep the prediction."""


@dataclass(frozen=True)
class KinematicState:
    position: tuple[float, float]
    velocity: tuple[float, float]
    heading: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (*self.position, *self.velocity, self.heading)):
            raise ValueError("kinematic state must be finite")
        object.__setattr__(self, "heading", normalize_yaw(self.heading))


@dataclass(frozen=True, eq=False)
class KalmanBelief:
    mean: np.ndarray  # (px, py, vx, vy)
    cov: np.ndarray
    t: float

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(4)
        cov = np.asarray(self.cov, dtype=float).reshape(4, 4)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def is_valid(self) -> bool:
        return (np.allclose(self.cov, self.cov.T, atol=1e-12)
                and float(np.linalg.eigvalsh(self.cov).min()) >= -PSD_TOL)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist(), "t": self.t}

    @classmethod
    def from_dict(cls, doc: dict) -> "KalmanBelief":
        return cls(np.array(doc["mean"]), np.array(doc["cov"]), float(doc["t"]))


@dataclass(frozen=True, eq=False)
class KalmanModel:
    """Linear model x' = F x + B u, z = M x with noise covariances Q and R.

    F is always the constant-velocity matrix for ``dt``.  ``u`` defaults to
    zero; B and u are kept as a hook for known accelerations.
    """

    dt: float = 0.1
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.5, 0.5]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.04, 0.04]))
    M: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(2), np.zeros((2, 2))]))
    B: np.ndarray = field(default_factory=lambda: np.zeros((4, 2)))
    u: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        for name in ("Q", "R"):
            m = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not np.allclose(m, m.T) or np.linalg.eigvalsh(m).min() < -PSD_TOL:
                raise ValueError(f"{name} must be symmetric positive semidefinite")
            object.__setattr__(self, name, m)

    @property
    def F(self) -> np.ndarray:
        f = np.eye(4)
        f[0, 2] = f[1, 3] = self.dt
        return f

    def with_dt(self, dt: float) -> "KalmanModel":
        return replace(self, dt=dt)


def horizon_steps(h: float, dt: float) -> int:
    """Nearest whole number of filter steps covering ``h`` (halves round up).

    The residual |h - steps * dt| <= dt / 2 is not propagated.
    """
    if h < 0:
        raise ValueError("horizon must be >= 0")
    return int(math.floor(h / dt + 0.5 + 1e-9))


def heading_from_velocity(velocity, previous: float = 0.0, min_speed: float = HEADING_MIN_SPEED) -> float:
    vx, vy = float(velocity[0]), float(velocity[1])
    if math.hypot(vx, vy) > min_speed:
        return normalize_yaw(math.atan2(vy, vx))
    return normalize_yaw(previous)


def _sym(p: np.ndarray) -> np.ndarray:
    return 0.5 * (p + p.T)


def kf_predict(belief: KalmanBelief, model: KalmanModel) -> KalmanBelief:
    f = model.F
    x = f @ belief.mean + model.B @ model.u
    p = _sym(f @ belief.cov @ f.T + model.Q)
    return KalmanBelief(x, p, belief.t + model.dt)


def kf_update(belief: KalmanBelief, z, model: KalmanModel) -> KalmanBelief:
    """Measurement update in Joseph form.

    Raises DegradedUpdateError when the innovation covariance is singular or
    its condition number exceeds ``COND_LIMIT``.
    """
    m, p = model.M, belief.cov
    z = np.asarray(z, dtype=float).reshape(m.shape[0])
    s = m @ p @ m.T + model.R
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > COND_LIMIT:
        raise DegradedUpdateError("innovation covariance is singular")
    k = np.linalg.solve(s, m @ p).T  # P M^T S^-1, S symmetric
    x = belief.mean + k @ (z - m @ belief.mean)
    ikm = np.eye(4) - k @ m
    p_new = _sym(ikm @ p @ ikm.T + k @ model.R @ k.T)
    return KalmanBelief(x, p_new, belief.t)


def kf_horizon(belief: KalmanBelief, model: KalmanModel, h_steps: int) -> KalmanBelief:
    """Open-loop forecast ``h_steps`` filter steps ahead (control input ignored).

    Mean is F^h x; covariance is F^h P (F^h)^T plus the accumulated process
    noise sum of F^i Q (F^i)^T for i < h.
    """
    if h_steps < 0:
        raise ValueError("h_steps must be >= 0")
    if h_steps == 0:
        return belief
    fh = np.linalg.matrix_power(model.F, h_steps)
    acc = np.zeros((4, 4))
    fi = np.eye(4)
    for _ in range(h_steps):
        acc += fi @ model.Q @ fi.T
        fi = model.F @ fi
    cov = _sym(fh @ belief.cov @ fh.T + acc)
    return KalmanBelief(fh @ belief.mean, cov, belief.t + h_steps * model.dt)


@dataclass(frozen=True)
class Measurement:
    source: str
    t: float
    z: tuple[float, float]
    yaw: Optional[float] = None
    z_height: float = 0.0


def initial_belief(m: Measurement, model: KalmanModel, velocity=(0.0, 0.0),
                   velocity_var: float = 1.0) -> KalmanBelief:
    cov = np.zeros((4, 4))
    cov[:2, :2] = model.R
    cov[2, 2] = cov[3, 3] = velocity_var
    return KalmanBelief(np.array([m.z[0], m.z[1], velocity[0], velocity[1]]), cov, m.t)


@dataclass(frozen=True, eq=False)
class Forecast:
    entity: str
    pose: Pose
    belief: KalmanBelief  # filtered belief at the current time
    predicted: KalmanBelief  # open-loop forecast at current time + h


def _advance(belief: KalmanBelief, model: KalmanModel, t: float) -> KalmanBelief:
    n = horizon_steps(max(0.0, t - belief.t), model.dt)
    for _ in range(n):
        belief = kf_predict(belief, model)
    # snap to the target time so rounding never accumulates
    return KalmanBelief(belief.mean, belief.cov, t) if n else belief


class Tracker:
    """Filter for one entity; fuses measurements in time order."""

    def __init__(self, entity: str, model: KalmanModel):
        self.entity = entity
        self.model = model
        self.belief: Optional[KalmanBelief] = None
        self.heading = 0.0
        self.z_height = 0.0
        self.dropped_late = 0
        self.degraded = 0

    def ingest(self, m: Measurement) -> bool:
        """Fuse one measurement; returns False if it was dropped as late."""
        if self.belief is None:
            self.belief = initial_belief(m, self.model)
        else:
            if m.t < self.belief.t:
                self.dropped_late += 1
                log.debug("%s: dropped late measurement at t=%.3f", self.entity, m.t)
                return False
            pred = _advance(self.belief, self.model, m.t)
            try:
                self.belief = kf_update(pred, m.z, self.model)
            except DegradedUpdateError:
                self.degraded += 1
                self.belief = pred
        if m.yaw is not None:
            self.heading = normalize_yaw(m.yaw)
        self.heading = heading_from_velocity(self.belief.velocity, self.heading)
        self.z_height = m.z_height
        return True

    def forecast(self, h: float, t_now: Optional[float] = None) -> Forecast:
        if self.belief is None:
            raise ValueError(f"no measurement yet for {self.entity!r}")
        now = self.belief if t_now is None else _advance(self.belief, self.model, t_now)
        pred = kf_horizon(now, self.model, horizon_steps(h, self.model.dt))
        yaw = heading_from_velocity(pred.velocity, self.heading)
        pose = Pose(float(pred.mean[0]), float(pred.mean[1]), self.z_height, yaw)
        return Forecast(self.entity, pose, now, pred)


def predict_all(
    beliefs: Mapping[str, KalmanBelief],
    measurements: Sequence[Measurement],
    h: float,
    model: Optional[KalmanModel] = None,
    headings: Optional[Mapping[str, float]] = None,
    t_now: Optional[float] = None,
) -> dict[str, Forecast]:
    """Predict, fuse and forecast every entity from a snapshot of beliefs.

    Measurements are fused in time order per entity.  Entities without a
    fresh measurement are propagated open-loop to ``t_now`` (default: the
    latest time seen in the batch or the beliefs).  Inputs are not modified.
    """
    model = model or KalmanModel()
    headings = headings or {}
    if t_now is None:
        times = [m.t for m in measurements] + [b.t for b in beliefs.values()]
        t_now = max(times) if times else 0.0
    trackers: dict[str, Tracker] = {}
    for entity, b in beliefs.items():
        tr = Tracker(entity, model)
        tr.belief = b
        tr.heading = headings.get(entity, heading_from_velocity(b.velocity, 0.0))
        trackers[entity] = tr
    for m in sorted(measurements, key=lambda m: (m.t, m.source)):
        trackers.setdefault(m.source, Tracker(m.source, model)).ingest(m)
    return {e: trackers[e].forecast(h, t_now) for e in sorted(trackers)}
