"""Packed triangle arrays and compiled ray/segment intersection kernels.

Triangles are grouped by object; each object gets an axis-aligned bounding box
that is tested before its triangles.  Edge and vertex hits count as hits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

# self-intersection guard (m)
EPS_GEOM = 1e-4

_PARALLEL_DET = 1e-14


@njit(cache=True, inline="always")
def _box_overlaps(o, d, lo, hi, tmin, tmax):
    t0 = tmin
    t1 = tmax
    for a in range(3):
        if d[a] == 0.0:
            if o[a] < lo[a] or o[a] > hi[a]:
                return False
        else:
            inv = 1.0 / d[a]
            ta = (lo[a] - o[a]) * inv
            tb = (hi[a] - o[a]) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
    return True


@njit(cache=True, inline="always")
def _triangle_t(o, d, v0, e1, e2):
    # Moller-Trumbore, inclusive on edges and vertices; inf on miss
    px = d[1] * e2[2] - d[2] * e2[1]
    py = d[2] * e2[0] - d[0] * e2[2]
    pz = d[0] * e2[1] - d[1] * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    if abs(det) < _PARALLEL_DET:
        return np.inf
    inv = 1.0 / det
    sx = o[0] - v0[0]
    sy = o[1] - v0[1]
    sz = o[2] - v0[2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < 0.0 or u > 1.0:
        return np.inf
    qx = sy * e1[2] - sz * e1[1]
    qy = sz * e1[0] - sx * e1[2]
    qz = sx * e1[1] - sy * e1[0]
    v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return np.inf
    return (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv


@njit(cache=True)
def nearest_hit(o, d, tmin, tmax, v0, e1, e2, lo, hi, ostart, oend):
    """Index and distance of the nearest triangle with tmin < t < tmax (-1 if none)."""
    best = -1
    best_t = tmax
    for ob in range(lo.shape[0]):
        if not _box_overlaps(o, d, lo[ob], hi[ob], tmin, best_t):
            continue
        for k in range(ostart[ob], oend[ob]):
            t = _triangle_t(o, d, v0[k], e1[k], e2[k])
            if t > tmin and t < best_t:
                best_t = t
                best = k
    return best, best_t


@njit(cache=True)
def any_hit(o, d, tmin, tmax, v0, e1, e2, lo, hi, ostart, oend):
    for ob in range(lo.shape[0]):
        if not _box_overlaps(o, d, lo[ob], hi[ob], tmin, tmax):
            continue
        for k in range(ostart[ob], oend[ob]):
            t = _triangle_t(o, d, v0[k], e1[k], e2[k])
            if t > tmin and t < tmax:
                return True
    return False


@njit(cache=True)
def segments_clear(a, b, eps, v0, e1, e2, lo, hi, ostart, oend):
    """Vectorised open-segment visibility for rows of ``a`` and ``b``."""
    n = a.shape[0]
    out = np.empty(n, dtype=np.bool_)
    d = np.empty(3)
    for i in range(n):
        length = 0.0
        for k in range(3):
            d[k] = b[i, k] - a[i, k]
            length += d[k] * d[k]
        length = math.sqrt(length)
        if length <= 2.0 * eps:
            out[i] = True
            continue
        for k in range(3):
            d[k] /= length
        out[i] = not any_hit(a[i], d, eps, length - eps, v0, e1, e2, lo, hi, ostart, oend)
    return out


@dataclass(frozen=True, eq=False)
class GeometryIndex:
    """Flat arrays describing a scene for the compiled kernels.

    Kernel triangle ``k`` corresponds to scene patch ``tri_patch[k]``.
    Coplanar triangles of one object share a plane id; wedge edges are the
    triangle edges where the surface bends or ends.
    """

    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    normal: np.ndarray
    tri_patch: np.ndarray
    tri_plane: np.ndarray
    tri_pec: np.ndarray
    tri_scatters: np.ndarray
    obj_lo: np.ndarray
    obj_hi: np.ndarray
    obj_start: np.ndarray
    obj_end: np.ndarray
    plane_normal: np.ndarray
    plane_offset: np.ndarray
    plane_material: tuple
    plane_object: tuple
    plane_tris: tuple
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_tri: np.ndarray
    tri_edges: np.ndarray

    @property
    def n_tris(self) -> int:
        return self.v0.shape[0]

    @property
    def kernel_args(self):
        return (self.v0, self.e1, self.e2, self.obj_lo, self.obj_hi, self.obj_start, self.obj_end)

    @classmethod
    def build(cls, scene) -> "GeometryIndex":
        order: dict[str, list[int]] = {}
        for i, p in enumerate(scene.patches):
            order.setdefault(p.object_id, []).append(i)
        tri_patch = np.array([i for ids in order.values() for i in ids], dtype=np.int64)
        n = len(tri_patch)
        verts = np.array([scene.patches[i].vertices for i in tri_patch], dtype=float).reshape(n, 3, 3)
        v0 = np.ascontiguousarray(verts[:, 0])
        e1 = np.ascontiguousarray(verts[:, 1] - verts[:, 0])
        e2 = np.ascontiguousarray(verts[:, 2] - verts[:, 0])
        cross = np.cross(e1, e2) if n else np.zeros((0, 3))
        normal = cross / np.linalg.norm(cross, axis=1, keepdims=True) if n else cross

        mats = [scene.materials[scene.patches[i].material] for i in tri_patch]
        tri_pec = np.array([m.is_perfect_conductor for m in mats], dtype=np.bool_)
        tri_scatters = np.array([m.scattering_coefficient > 0 for m in mats], dtype=np.bool_)

        n_obj = len(order)
        obj_lo = np.zeros((n_obj, 3))
        obj_hi = np.zeros((n_obj, 3))
        obj_start = np.zeros(n_obj, dtype=np.int64)
        obj_end = np.zeros(n_obj, dtype=np.int64)
        tri_plane = np.zeros(n, dtype=np.int64)
        plane_normal, plane_offset, plane_material, plane_object, plane_tris = [], [], [], [], []
        edge_map: dict = {}
        pos = 0
        for ob, (oid, ids) in enumerate(order.items()):
            count = len(ids)
            sl = slice(pos, pos + count)
            pts = verts[sl].reshape(-1, 3)
            obj_lo[ob] = pts.min(axis=0) - 1e-9
            obj_hi[ob] = pts.max(axis=0) + 1e-9
            obj_start[ob], obj_end[ob] = pos, pos + count
            local_planes: list[int] = []
            for k in range(pos, pos + count):
                nk = normal[k]
                ck = float(nk @ v0[k])
                found = -1
                for pid in local_planes:
                    dot = float(plane_normal[pid] @ nk)
                    if abs(abs(dot) - 1.0) < 1e-9 and abs(plane_offset[pid] - math.copysign(1.0, dot) * ck) < 1e-7:
                        found = pid
                        break
                if found < 0:
                    found = len(plane_normal)
                    plane_normal.append(nk.copy())
                    plane_offset.append(ck)
                    plane_material.append(scene.patches[tri_patch[k]].material)
                    plane_object.append(oid)
                    plane_tris.append([])
                    local_planes.append(found)
                plane_tris[found].append(k)
                tri_plane[k] = found
                corners = [tuple(np.round(verts[k, j], 9)) for j in range(3)]
                for j in range(3):
                    key = (ob,) + tuple(sorted((corners[j], corners[(j + 1) % 3])))
                    edge_map.setdefault(key, []).append((k, j))
            pos += count

        edge_a, edge_b, edge_tri = [], [], []
        tri_edges = -np.ones((n, 3), dtype=np.int64)
        for key, uses in edge_map.items():
            planes = {int(tri_plane[k]) for k, _ in uses}
            if len(uses) == 2 and len(planes) == 1:
                continue
            eid = len(edge_a)
            edge_a.append(key[1])
            edge_b.append(key[2])
            edge_tri.append(uses[0][0])
            for k, j in uses:
                tri_edges[k, j] = eid

        return cls(
            v0=v0, e1=e1, e2=e2, normal=np.ascontiguousarray(normal),
            tri_patch=tri_patch, tri_plane=tri_plane, tri_pec=tri_pec, tri_scatters=tri_scatters,
            obj_lo=obj_lo, obj_hi=obj_hi, obj_start=obj_start, obj_end=obj_end,
            plane_normal=np.array(plane_normal).reshape(-1, 3),
            plane_offset=np.array(plane_offset, dtype=float),
            plane_material=tuple(plane_material), plane_object=tuple(plane_object),
            plane_tris=tuple(np.array(t, dtype=np.int64) for t in plane_tris),
            edge_a=np.array(edge_a, dtype=float).reshape(-1, 3),
            edge_b=np.array(edge_b, dtype=float).reshape(-1, 3),
            edge_tri=np.array(edge_tri, dtype=np.int64),
            tri_edges=tri_edges,
        )

    def first_hit(self, origin, direction, max_range: float = math.inf):
        from .model import Hit

        o = np.asarray(origin, dtype=float)
        d = np.asarray(direction, dtype=float)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        if self.n_tris == 0:
            return None
        k, t = nearest_hit(o, d, EPS_GEOM, float(max_range), *self.kernel_args)
        if k < 0:
            return None
        return Hit(int(self.tri_patch[k]), o + t * d, float(t))

    def segment_clear(self, a, b) -> bool:
        if self.n_tris == 0:
            return True
        a = np.asarray(a, dtype=float).reshape(1, 3)
        b = np.asarray(b, dtype=float).reshape(1, 3)
        return bool(segments_clear(a, b, EPS_GEOM, *self.kernel_args)[0])

    def segments_clear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.ascontiguousarray(a, dtype=float).reshape(-1, 3)
        b = np.ascontiguousarray(b, dtype=float).reshape(-1, 3)
        if self.n_tris == 0:
            return np.ones(len(a), dtype=bool)
        return segments_clear(a, b, EPS_GEOM, *self.kernel_args)

    def on_plane_patch(self, plane: int, point: np.ndarray, tol: float = 1e-7) -> Optional[int]:
        """Scene patch index of the plane's triangle containing ``point`` (inclusive), else None."""
        for k in self.plane_tris[plane]:
            w = point - self.v0[k]
            e1, e2 = self.e1[k], self.e2[k]
            d00, d01, d11 = e1 @ e1, e1 @ e2, e2 @ e2
            d20, d21 = w @ e1, w @ e2
            den = d00 * d11 - d01 * d01
            v = (d11 * d20 - d01 * d21) / den
            u = (d00 * d21 - d01 * d20) / den
            scale = math.sqrt(max(d00, d11))
            t = tol / scale
            if v >= -t and u >= -t and u + v <= 1.0 + t:
                return int(self.tri_patch[k])
        return None
