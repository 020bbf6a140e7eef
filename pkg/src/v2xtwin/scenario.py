"""Scenario files: scene reference, entities with trajectories, links and loop settings.

Bundled scenarios can be referred to by name (``tokyo-analog``); any other
argument is read as a path.  Scene references resolve the same way, relative
paths being taken from the scenario file's directory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .scene.model import Pose, Scene, SceneError, assemble_scene, load_scene

DATA = resources.files("v2xtwin") / "data"
BUNDLED = ("freespace", "two-ray", "grazing-blocker", "tokyo-analog")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class EntitySpec:
    """One entity; a single waypoint means it stays put."""

    id: str
    template: Optional[str]
    waypoints: tuple[tuple[float, Pose], ...]

    @property
    def is_static(self) -> bool:
        return len(self.waypoints) == 1

    def _segment(self, t: float):
        wp = self.waypoints
        if t <= wp[0][0] or len(wp) == 1:
            return wp[0], wp[0], 0.0
        if t >= wp[-1][0]:
            return wp[-1], wp[-1], 0.0
        for (t0, p0), (t1, p1) in zip(wp, wp[1:]):
            if t0 <= t <= t1:
                return (t0, p0), (t1, p1), (t - t0) / (t1 - t0)
        raise AssertionError("unreachable")

    def pose_at(self, t: float) -> Pose:
        """Linear interpolation between waypoints, clamped at both ends; yaw of the segment start."""
        (_, p0), (_, p1), u = self._segment(t)
        return Pose(p0.x + u * (p1.x - p0.x), p0.y + u * (p1.y - p0.y), p0.z + u * (p1.z - p0.z), p0.yaw)

    def speed_at(self, t: float) -> float:
        (t0, p0), (t1, p1), _ = self._segment(t)
        if t1 <= t0 or t <= self.waypoints[0][0] or t >= self.waypoints[-1][0]:
            return 0.0
        return float(np.linalg.norm(p1.position - p0.position) / (t1 - t0))


@dataclass(frozen=True)
class TwinSettings:
    h_ms: float = 500.0
    dt_pe_ms: float = 100.0
    di: int = 2
    tx_power_dbm: float = 10.0
    truth_di: Optional[int] = None  # defaults to ``di``
    noise_db: float = 1.0
    tau_m_ms: float = 8.9
    mode: str = "coherent"


@dataclass(frozen=True)
class SweepSettings:
    di: int = 2
    t_start: float = 0.0
    t_end: float = 10.0
    instants: int = 20
    eps_max_m: float = 1.0


@dataclass(frozen=True)
class BenchSettings:
    ray_cap: int = 20000
    repetitions: int = 5
    t: float = 0.0


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    scene_ref: str
    base_dir: Optional[Path]
    entities: tuple[EntitySpec, ...]
    links: tuple[tuple[str, str], ...]
    ego: Optional[str]
    perturb: tuple[str, ...]
    duration_s: float
    twin: TwinSettings = TwinSettings()
    sweep: SweepSettings = SweepSettings()
    bench: BenchSettings = BenchSettings()
    _scene: list = field(default_factory=list, repr=False)

    @property
    def entity_ids(self) -> list[str]:
        return [e.id for e in self.entities]

    @property
    def templates(self) -> dict[str, Optional[str]]:
        return {e.id: e.template for e in self.entities}

    def entity(self, entity_id: str) -> EntitySpec:
        for e in self.entities:
            if e.id == entity_id:
                return e
        raise ScenarioError(f"unknown entity {entity_id!r}")

    def scene(self) -> Scene:
        if not self._scene:
            self._scene.append(load_scene(resolve_scene(self.scene_ref, self.base_dir)))
        return self._scene[0]

    def frame(self, t: float) -> dict[str, Pose]:
        return {e.id: e.pose_at(t) for e in self.entities}

    def validate_scene(self) -> None:
        scene = self.scene()
        for e in self.entities:
            if e.template is not None and e.template not in scene.vehicle_templates:
                raise ScenarioError(f"entity {e.id!r} uses unknown template {e.template!r}")


def place(scene: Scene, poses: Mapping[str, Pose], templates: Mapping[str, Optional[str]]) -> Scene:
    """Assemble vehicles at their poses; template-less entities become bare antennas."""
    vehicles = {e: p for e, p in poses.items() if templates.get(e)}
    fixed = {e: (p.x, p.y, p.z) for e, p in poses.items() if not templates.get(e)}
    return assemble_scene(scene, vehicles, {e: templates[e] for e in vehicles}, fixed)


def resolve_scene(ref: str, base_dir: Optional[Path]) -> Path:
    if ref in BUNDLED:
        return Path(str(DATA / "scenes" / f"{ref}.json"))
    p = Path(ref)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return p


def scenario_path(ref) -> Path:
    if str(ref) in BUNDLED:
        return Path(str(DATA / "scenarios" / f"{ref}.json"))
    return Path(ref)


def _pose(doc, what: str) -> Pose:
    try:
        if isinstance(doc, dict):
            return Pose(float(doc["x"]), float(doc["y"]), float(doc.get("z", 0.0)), float(doc.get("yaw", 0.0)))
        x, y, z, yaw = (float(v) for v in doc)
        return Pose(x, y, z, yaw)
    except (KeyError, TypeError, ValueError):
        raise ScenarioError(f"{what}: bad pose {doc!r}") from None


def _settings(cls, doc: Optional[dict], what: str):
    doc = doc or {}
    known = set(cls.__dataclass_fields__)
    extra = set(doc) - known
    if extra:
        raise ScenarioError(f"{what}: unknown keys {sorted(extra)}")
    return cls(**doc)


def scenario_from_dict(doc: dict, name: str = "scenario", base_dir: Optional[Path] = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    entities = []
    for e in doc.get("entities", []):
        eid = e.get("id")
        if not isinstance(eid, str):
            raise ScenarioError(f"entity without an id: {e!r}")
        if "static" in e:
            wps = ((0.0, _pose(e["static"], eid)),)
        elif "trajectory" in e:
            rows = e["trajectory"]
            if not rows:
                raise ScenarioError(f"{eid}: empty trajectory")
            wps = tuple((float(r[0]), _pose(r[1:], eid)) for r in rows)
            times = [t for t, _ in wps]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ScenarioError(f"{eid}: trajectory times must be strictly increasing")
        else:
            raise ScenarioError(f"{eid}: needs 'static' or 'trajectory'")
        entities.append(EntitySpec(eid, e.get("template"), wps))
    ids = [e.id for e in entities]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate entity ids")
    links = []
    for l in doc.get("links", []):
        if not isinstance(l, (list, tuple)) or len(l) != 2:
            raise ScenarioError(f"bad link {l!r}")
        a, b = str(l[0]), str(l[1])
        for end in (a, b):
            if end not in ids:
                raise ScenarioError(f"link ({a}, {b}) uses undeclared entity {end!r}")
        if a == b:
            raise ScenarioError(f"link ({a}, {b}) connects an entity to itself")
        links.append((a, b))
    ego = doc.get("ego")
    if ego is not None and ego not in ids:
        raise ScenarioError(f"ego {ego!r} is not a declared entity")
    perturb = tuple(doc.get("perturb", [e.id for e in entities if not e.is_static]))
    for p in perturb:
        if p not in ids:
            raise ScenarioError(f"perturbed entity {p!r} is not declared")
    duration = float(doc.get("duration_s", 0.0))
    if duration < 0 or not math.isfinite(duration):
        raise ScenarioError("duration_s must be >= 0")
    if "scene" not in doc:
        raise ScenarioError("scenario needs a scene reference")
    return Scenario(
        name=str(doc.get("name", name)),
        scene_ref=str(doc["scene"]),
        base_dir=base_dir,
        entities=tuple(entities),
        links=tuple(links),
        ego=ego,
        perturb=perturb,
        duration_s=duration,
        twin=_settings(TwinSettings, doc.get("twin"), "twin"),
        sweep=_settings(SweepSettings, doc.get("sweep"), "sweep"),
        bench=_settings(BenchSettings, doc.get("bench"), "bench"),
    )


def load_scenario(ref) -> Scenario:
    path = scenario_path(ref)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: malformed JSON ({exc})") from None
    sc = scenario_from_dict(doc, path.stem, path.parent)
    try:
        sc.validate_scene()
    except (SceneError, OSError) as exc:
        raise ScenarioError(str(exc)) from None
    return sc
