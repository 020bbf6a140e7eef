import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.constants import c

from v2xtwin.scene import (
    EPS_GEOM,
    Material,
    MaterialError,
    Pose,
    SceneError,
    assemble_scene,
    box_triangles,
    builtin_material,
    load_scene,
    normalize_yaw,
    p2040_permittivity,
    scene_from_dict,
)

from conftest import box, make_scene


def unit_wall(x, material="concrete"):
    # unit square in the plane x = const, centred on the x axis
    return {"id": f"wall{x}", "material": material, "mesh": {"tris": [
        [[x, -0.5, -0.5], [x, 0.5, -0.5], [x, 0.5, 0.5]],
        [[x, -0.5, -0.5], [x, 0.5, 0.5], [x, -0.5, 0.5]],
    ]}}


def brute_force_clear(scene, a, b):
    """Open segment test against every triangle, Moller-Trumbore with inclusive edges."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    length = np.linalg.norm(d)
    d = d / length
    for p in scene.patches:
        v0, v1, v2 = (np.asarray(v, float) for v in p.vertices)
        e1, e2 = v1 - v0, v2 - v0
        h = np.cross(d, e2)
        det = e1 @ h
        if abs(det) < 1e-14:
            continue
        s = a - v0
        u = (s @ h) / det
        q = np.cross(s, e1)
        v = (d @ q) / det
        t = (e2 @ q) / det
        if u >= 0 and v >= 0 and u + v <= 1 and EPS_GEOM < t < length - EPS_GEOM:
            return False
    return True


class TestMaterials:
    def test_p2040_concrete_at_60ghz(self):
        eps = p2040_permittivity(5.24, 0.0, 0.0462, 0.7822, 60e9)
        sigma = 0.0462 * 60**0.7822
        assert eps.real == pytest.approx(5.24)
        assert eps.imag == pytest.approx(-17.98 * sigma / 60)

    def test_builtin_metal_is_pec(self):
        m = builtin_material("metal", 60e9)
        assert m.is_perfect_conductor

    def test_builtin_unknown(self):
        with pytest.raises(MaterialError):
            builtin_material("glass", 60e9)

    @pytest.mark.parametrize("kw", [
        {"relative_permittivity_real": 0.5},
        {"relative_permittivity_imag": 0.1},
        {"scattering_coefficient": 1.5},
        {"scattering_coefficient": -0.1},
        {"slab_thickness": 0.0},
    ])
    def test_invalid_material(self, kw):
        with pytest.raises(MaterialError):
            Material("x", **kw)


class TestPose:
    @given(st.floats(-100, 100))
    def test_yaw_range(self, yaw):
        y = normalize_yaw(yaw)
        assert -math.pi < y <= math.pi
        assert math.isclose(math.cos(y), math.cos(yaw), abs_tol=1e-9)

    def test_pi_maps_to_pi(self):
        assert normalize_yaw(math.pi) == pytest.approx(math.pi)
        assert normalize_yaw(-math.pi) == pytest.approx(math.pi)


class TestLoadScene:
    def test_empty_geometry(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps({"carrier_frequency_hz": 60e9, "materials": [], "objects": []}))
        s = load_scene(p)
        assert len(s.patches) == 0
        assert s.wavelength == pytest.approx(c / 60e9)
        assert s.wavelength == pytest.approx(4.9965e-3, rel=1e-4)

    def test_box_has_twelve_patches(self):
        s = make_scene([box("b", (0, 0, 1), (2, 2, 2))])
        assert len(s.patches) == 12

    def test_undefined_material_named(self):
        with pytest.raises(SceneError, match="glass"):
            make_scene([box("b", (0, 0, 1), (2, 2, 2), material="glass")])

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(SceneError):
            load_scene(p)

    def test_degenerate_triangle(self):
        obj = {"id": "flat", "material": "metal", "mesh": {"tris": [[[0, 0, 0], [1, 0, 0], [2, 0, 0]]]}}
        with pytest.raises(SceneError, match="flat"):
            make_scene([obj])

    def test_bad_frequency(self):
        with pytest.raises(SceneError):
            scene_from_dict({"carrier_frequency_hz": 0, "materials": []})

    def test_duplicate_object_id(self):
        with pytest.raises(SceneError, match="duplicate"):
            make_scene([box("b", (0, 0, 1), (1, 1, 1)), box("b", (5, 0, 1), (1, 1, 1))])

    def test_custom_material(self):
        s = make_scene(materials=["metal", {"name": "glass", "eps_r_real": 6.0, "eps_r_imag": -0.1}])
        assert s.materials["glass"].permittivity == complex(6.0, -0.1)

    def test_bundled_scenes_load(self):
        from v2xtwin.scenario import BUNDLED, resolve_scene

        for name in BUNDLED:
            s = load_scene(resolve_scene(name, None))
            assert s.carrier_frequency == 60e9


class TestAssemble:
    def test_zero_entities_identity(self, empty_scene):
        assert assemble_scene(empty_scene, {}, {}) is empty_scene

    def test_translation_at_yaw_zero(self, empty_scene):
        s = assemble_scene(empty_scene, {"v": Pose(3.0, -2.0, 0.0, 0.0)}, {"v": "car"})
        ref = box_triangles((0, 0, 0.75), (4.5, 1.8, 1.5))
        got = [p.vertices for p in s.patches]
        for tri_ref, tri in zip(ref, got):
            assert np.allclose(np.asarray(tri) - np.asarray(tri_ref), [3.0, -2.0, 0.0], atol=1e-12)
        assert np.allclose(s.antenna("v"), [3.0, -2.0, 1.8])

    def test_yaw_quarter_turn_maps_x_to_y(self, empty_scene):
        s = assemble_scene(empty_scene, {"v": Pose(0, 0, 0, math.pi / 2)}, {"v": "car"})
        v = np.array([p.vertices for p in s.patches]).reshape(-1, 3)
        # the 4.5 m body length now lies along world y
        assert np.ptp(v[:, 1]) == pytest.approx(4.5)
        assert np.ptp(v[:, 0]) == pytest.approx(1.8)

    def test_antenna_offset_rotates(self):
        tpl = [{"name": "car", "size": [4, 2, 1.5], "antenna_offset": [1.0, 0.0, 1.6]}]
        s0 = make_scene(templates=tpl)
        s = assemble_scene(s0, {"v": Pose(0, 0, 0, math.pi / 2)}, {"v": "car"})
        assert np.allclose(s.antenna("v"), [0.0, 1.0, 1.6], atol=1e-12)

    def test_unknown_template(self, empty_scene):
        with pytest.raises(SceneError):
            assemble_scene(empty_scene, {"v": Pose(0, 0)}, {"v": "tank"})

    def test_unknown_antenna(self, empty_scene):
        with pytest.raises(SceneError):
            empty_scene.antenna("nobody")

    def test_pure(self, empty_scene):
        poses = {"b": Pose(1, 2, 0, 0.3), "a": Pose(-4, 0, 0, 1.0)}
        t = {"a": "car", "b": "car"}
        s1 = assemble_scene(empty_scene, poses, t)
        s2 = assemble_scene(empty_scene, dict(reversed(list(poses.items()))), t)
        b1 = np.array([p.vertices for p in s1.patches]).tobytes()
        b2 = np.array([p.vertices for p in s2.patches]).tobytes()
        assert b1 == b2


class TestQueries:
    def test_empty_scene(self, empty_scene):
        assert empty_scene.first_hit((0, 0, 0), (1, 0, 0)) is None
        assert empty_scene.segment_clear((0, 0, 0), (10, 0, 0))

    def test_perpendicular_distance(self):
        s = make_scene([unit_wall(5.0)])
        hit = s.first_hit((0, 0, 0), (1, 0, 0))
        assert hit.distance == pytest.approx(5.0, abs=1e-9)
        assert np.allclose(hit.point, [5, 0, 0])

    def test_max_range(self):
        s = make_scene([unit_wall(5.0)])
        assert s.first_hit((0, 0, 0), (1, 0, 0), max_range=4.0) is None

    def test_non_unit_direction_rejected(self):
        s = make_scene([unit_wall(5.0)])
        with pytest.raises(ValueError):
            s.first_hit((0, 0, 0), (2, 0, 0))

    def test_edge_hit_inclusive_and_repeatable(self):
        s = make_scene([unit_wall(5.0)])
        # aims exactly at the shared diagonal and at the outer edge
        for target in ((5, 0.25, 0.25), (5, 0.5, 0.0)):
            d = np.array(target, float)
            d /= np.linalg.norm(d)
            hits = [s.first_hit((0, 0, 0), d) for _ in range(3)]
            assert all(h is not None for h in hits)
            assert len({h.distance for h in hits}) == 1

    def test_wall_blocks_midpoint(self):
        s = make_scene([unit_wall(5.0)])
        assert not s.segment_clear((0, 0, 0), (10, 0, 0))

    def test_wall_behind_b(self):
        s = make_scene([unit_wall(12.0)])
        assert s.segment_clear((0, 0, 0), (10, 0, 0))
        assert brute_force_clear(s, (0, 0, 0), (10, 0, 0))

    def test_endpoint_on_surface_is_clear(self):
        s = make_scene([unit_wall(5.0)])
        assert s.segment_clear((0, 0, 0), (5, 0, 0))


def random_scene(rng, n_boxes=4):
    objs = []
    for i in range(n_boxes):
        center = rng.uniform(-8, 8, 3)
        size = rng.uniform(0.5, 4, 3)
        objs.append(box(f"b{i}", center, size, yaw=float(rng.uniform(-3, 3))))
    return objs


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_segment_clear_matches_brute_force_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    s = make_scene(random_scene(rng))
    for _ in range(10):
        a, b = rng.uniform(-12, 12, 3), rng.uniform(-12, 12, 3)
        got = s.segment_clear(a, b)
        assert got == s.segment_clear(b, a)
        assert got == brute_force_clear(s, a, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rigid_translation_invariance(seed):
    rng = np.random.default_rng(seed)
    objs = random_scene(rng)
    shift = rng.uniform(-50, 50, 3)
    moved = [box(o["id"], np.asarray(o["mesh"]["box"]["center"]) + shift, o["mesh"]["box"]["size"],
                 yaw=o["mesh"]["box"]["yaw"]) for o in objs]
    s1, s2 = make_scene(objs), make_scene(moved)
    for _ in range(10):
        a, b = rng.uniform(-12, 12, 3), rng.uniform(-12, 12, 3)
        assert s1.segment_clear(a, b) == s2.segment_clear(a + shift, b + shift)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        h1, h2 = s1.first_hit(a, d, 100.0), s2.first_hit(a + shift, d, 100.0)
        assert (h1 is None) == (h2 is None)
        if h1 is not None:
            assert h1.distance == pytest.approx(h2.distance, abs=1e-7)
            assert EPS_GEOM <= h1.distance <= 100.0
