"""Static geometry, vehicle placement and ray-geometry queries."""

from .geometry import EPS_GEOM, GeometryIndex
from .materials import Material, MaterialError, builtin_material, p2040_permittivity
from .model import (
    Hit,
    Pose,
    Scene,
    SceneError,
    SurfacePatch,
    VehicleTemplate,
    antenna_position,
    assemble_scene,
    box_triangles,
    load_scene,
    normalize_yaw,
    scene_from_dict,
)

__all__ = [
    "EPS_GEOM", "GeometryIndex", "Hit", "Material", "MaterialError", "Pose", "Scene",
    "SceneError", "SurfacePatch", "VehicleTemplate", "antenna_position", "assemble_scene",
    "box_triangles", "builtin_material", "load_scene", "normalize_yaw", "p2040_permittivity",
    "scene_from_dict",
]
