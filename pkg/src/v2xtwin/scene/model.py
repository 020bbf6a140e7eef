"""Scene description: triangle patches, materials, vehicle templates and poses."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .materials import Material, MaterialError, builtin_material, P2040_COEFFICIENTS

Vec3 = tuple[float, float, float]


class SceneError(ValueError):
    """Raised for malformed or inconsistent scene descriptions."""


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    y = math.fmod(yaw + math.pi, 2.0 * math.pi)
    if y <= 0.0:
        y += 2.0 * math.pi
    return y - math.pi


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def translated(self, dx: float, dy: float, dz: float = 0.0) -> "Pose":
        return Pose(self.x + dx, self.y + dy, self.z + dz, self.yaw)


@dataclass(frozen=True)
class SurfacePatch:
    vertices: tuple[Vec3, Vec3, Vec3]
    material: str
    object_id: str

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.shape != (3, 3) or not np.all(np.isfinite(v)):
            raise SceneError(f"object {self.object_id!r}: triangle needs three finite 3D vertices")
        if 0.5 * np.linalg.norm(np.cross(v[1] - v[0], v[2] - v[0])) <= 1e-12:
            raise SceneError(f"object {self.object_id!r}: degenerate triangle {self.vertices}")

    @property
    def normal(self) -> np.ndarray:
        v = np.asarray(self.vertices)
        n = np.cross(v[1] - v[0], v[2] - v[0])
        return n / np.linalg.norm(n)


@dataclass(frozen=True)
class VehicleTemplate:
    """Axis-aligned box vehicle with one roof-mounted antenna.

    ``size`` is (length, width, height); the box spans z in [0, height] above
    the pose, centred on the pose in x/y.  ``antenna_offset`` is given in the
    body frame (x forward, y left, z up).
    """

    name: str
    size: Vec3
    antenna_offset: Vec3
    material: str = "metal"


@dataclass(frozen=True)
class Hit:
    patch_index: int
    point: np.ndarray
    distance: float


def _rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


# unit cube corners, index = 4*ix + 2*iy + iz
_BOX_FACES = (
    (0, 1, 3, 2),  # -x
    (4, 6, 7, 5),  # +x
    (0, 4, 5, 1),  # -y
    (2, 3, 7, 6),  # +y
    (0, 2, 6, 4),  # -z
    (1, 5, 7, 3),  # +z
)


def box_triangles(center, size, yaw: float = 0.0) -> list[tuple[Vec3, Vec3, Vec3]]:
    """Twelve outward-wound triangles of a yawed box."""
    half = 0.5 * np.asarray(size, dtype=float)
    if np.any(half <= 0):
        raise SceneError(f"box size must be positive, got {size}")
    corners = np.array(
        [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float
    ) * half
    corners = corners @ _rotation_z(yaw).T + np.asarray(center, dtype=float)
    tris = []
    for a, b, c, d in _BOX_FACES:
        for i, j, k in ((a, b, c), (a, c, d)):
            tris.append(tuple(tuple(float(x) for x in corners[n]) for n in (i, j, k)))
    return tris


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable triangle scene.

    ``antennas`` maps entity ids to antenna positions; it is empty for a
    static scene and filled by :func:`assemble_scene`.
    """

    patches: tuple[SurfacePatch, ...]
    materials: Mapping[str, Material]
    carrier_frequency: float
    vehicle_templates: Mapping[str, VehicleTemplate] = field(default_factory=dict)
    antennas: Mapping[str, Vec3] = field(default_factory=dict)

    def __post_init__(self):
        if not self.carrier_frequency > 0:
            raise SceneError(f"carrier frequency must be positive, got {self.carrier_frequency}")
        for p in self.patches:
            if p.material not in self.materials:
                raise SceneError(f"object {p.object_id!r} references undefined material {p.material!r}")
        for t in self.vehicle_templates.values():
            if t.material not in self.materials:
                raise SceneError(f"template {t.name!r} references undefined material {t.material!r}")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @cached_property
    def index(self):
        from .geometry import GeometryIndex

        return GeometryIndex.build(self)

    def first_hit(self, origin, direction, max_range: float = math.inf) -> Optional[Hit]:
        """Nearest patch hit along a unit-direction ray, with t in (eps_geom, max_range)."""
        return self.index.first_hit(origin, direction, max_range)

    def segment_clear(self, a, b) -> bool:
        """True when the open segment (a, b) crosses no patch."""
        return self.index.segment_clear(a, b)

    def antenna(self, entity_id: str) -> np.ndarray:
        try:
            return np.asarray(self.antennas[entity_id], dtype=float)
        except KeyError:
            raise SceneError(f"no antenna for entity {entity_id!r}") from None


def _vec3(value, what: str) -> Vec3:
    try:
        v = tuple(float(x) for x in value)
    except (TypeError, ValueError):
        raise SceneError(f"{what}: expected three numbers, got {value!r}") from None
    if len(v) != 3:
        raise SceneError(f"{what}: expected three numbers, got {value!r}")
    return v


def _parse_material(entry: dict, frequency: float) -> Material:
    name = entry.get("name")
    if not isinstance(name, str):
        raise SceneError(f"material entry without a name: {entry!r}")
    try:
        if set(entry) <= {"name", "scattering"} and (name in P2040_COEFFICIENTS or name == "metal"):
            return builtin_material(name, frequency, float(entry.get("scattering", 0.0)))
        return Material(
            name=name,
            relative_permittivity_real=float(entry.get("eps_r_real", 1.0)),
            relative_permittivity_imag=float(entry.get("eps_r_imag", 0.0)),
            is_perfect_conductor=bool(entry.get("pec", False)),
            scattering_coefficient=float(entry.get("scattering", 0.0)),
            slab_thickness=float(entry.get("thickness", 0.1)),
        )
    except MaterialError as exc:
        raise SceneError(str(exc)) from None


def scene_from_dict(doc: dict) -> Scene:
    """Build a validated :class:`Scene` from the JSON scene schema."""
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a JSON object")
    try:
        frequency = float(doc["carrier_frequency_hz"])
    except (KeyError, TypeError, ValueError):
        raise SceneError("scene needs a numeric carrier_frequency_hz") from None
    materials = {}
    for entry in doc.get("materials", []):
        m = _parse_material(entry, frequency)
        materials[m.name] = m

    patches: list[SurfacePatch] = []
    seen_ids = set()
    for obj in doc.get("objects", []):
        oid = str(obj.get("id", f"object{len(seen_ids)}"))
        if oid in seen_ids:
            raise SceneError(f"duplicate object id {oid!r}")
        seen_ids.add(oid)
        mat = obj.get("material")
        if mat not in materials:
            raise SceneError(f"object {oid!r} references undefined material {mat!r}")
        mesh = obj.get("mesh", {})
        if "box" in mesh:
            box = mesh["box"]
            tris = box_triangles(
                _vec3(box.get("center"), f"{oid}.center"),
                _vec3(box.get("size"), f"{oid}.size"),
                float(box.get("yaw", 0.0)),
            )
        elif "tris" in mesh:
            tris = [tuple(_vec3(v, f"{oid} vertex") for v in tri) for tri in mesh["tris"]]
            if any(len(t) != 3 for t in tris):
                raise SceneError(f"object {oid!r}: every triangle needs three vertices")
        else:
            raise SceneError(f"object {oid!r}: mesh must be 'box' or 'tris'")
        patches.extend(SurfacePatch(t, mat, oid) for t in tris)

    templates = {}
    for t in doc.get("vehicle_templates", []):
        tpl = VehicleTemplate(
            name=str(t["name"]),
            size=_vec3(t.get("size"), f"template {t.get('name')}.size"),
            antenna_offset=_vec3(t.get("antenna_offset"), f"template {t.get('name')}.antenna_offset"),
            material=str(t.get("material", "metal")),
        )
        templates[tpl.name] = tpl
    return Scene(tuple(patches), materials, frequency, templates)


def load_scene(path) -> Scene:
    """Read and validate a JSON scene file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: malformed JSON ({exc})") from None
    return scene_from_dict(doc)


def vehicle_mesh(template: VehicleTemplate, pose: Pose) -> list[tuple[Vec3, Vec3, Vec3]]:
    length, width, height = template.size
    tris = box_triangles((0.0, 0.0, 0.5 * height), template.size)
    rot = _rotation_z(pose.yaw)
    shift = pose.position
    out = []
    for tri in tris:
        v = np.asarray(tri) @ rot.T + shift
        out.append(tuple(tuple(float(x) for x in row) for row in v))
    return out


def antenna_position(template: VehicleTemplate, pose: Pose) -> Vec3:
    p = _rotation_z(pose.yaw) @ np.asarray(template.antenna_offset) + pose.position
    return tuple(float(x) for x in p)


def assemble_scene(
    static: Scene,
    poses: Mapping[str, Pose],
    templates: Mapping[str, str],
    extra_antennas: Optional[Mapping[str, Vec3]] = None,
) -> Scene:
    """Place one vehicle box per entity at its pose on top of the static scene.

    Entities are processed in sorted id order so the output is a pure function
    of the inputs.  ``extra_antennas`` adds bare antenna positions (e.g. fixed
    radio heads) without geometry.
    """
    patches = list(static.patches)
    antennas = dict(static.antennas)
    for entity in sorted(poses):
        name = templates.get(entity)
        if name not in static.vehicle_templates:
            raise SceneError(f"entity {entity!r}: unknown vehicle template {name!r}")
        tpl = static.vehicle_templates[name]
        pose = poses[entity]
        patches.extend(SurfacePatch(t, tpl.material, entity) for t in vehicle_mesh(tpl, pose))
        antennas[entity] = antenna_position(tpl, pose)
    if extra_antennas:
        for entity, pos in extra_antennas.items():
            antennas[entity] = tuple(float(x) for x in pos)
    if not poses and not extra_antennas:
        return static
    return Scene(tuple(patches), static.materials, static.carrier_frequency,
                 static.vehicle_templates, antennas)
