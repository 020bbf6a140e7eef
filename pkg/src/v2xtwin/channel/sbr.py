"""Shooting-and-bouncing-rays path search with exact geometric refinement.

Rays leave the source along a Fibonacci lattice.  Every ray follows its
specular chain; with refraction enabled each non-metallic hit also spawns an
undeviated transmitted branch.  A ray segment passing inside the capture
sphere of the receiver turns the (plane, mechanism) sequence it followed into
a candidate.  Candidates are solved exactly with the image method and
accepted only if every interaction point lies on its surface and every
segment is unobstructed.  The search runs from both link ends and the
candidate sets are merged, so specular path geometry is reciprocal by
construction.

Diffuse scattering is grouped per illuminated (prefix, plane) sequence: the
rays hitting a plane after the same specular prefix contribute one scattered
path from their weighted hit centroid toward the receiver.  Diffraction uses a
single knife edge on the wedge edge closest to a blocked line-of-sight
segment that both link ends can see.  Edges lit from the transmitter also act as secondary
sources: a fan of rays from each edge finds specular chains toward the
receiver, and a chain whose direct specular path is shadowed gets a
diffracted replacement over the edge.
"""

from __future__ import annotations

import math
from dataclasses import replace
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numba import njit

from ..scene.geometry import EPS_GEOM, nearest_hit
from ..scene.model import Scene
from .antenna import ISOTROPIC, AntennaPattern
from .detail import DetailIndexConfig
from .em import fresnel_reflection, knife_edge_coefficient, pec_reflection, slab_transmission
from .paths import (
    Interaction,
    PropagationPath,
    canonical_order,
    eval_path_gain,
    reflection_jones,
    scalar_jones,
    transmission_jones,
)

KIND_SPECULAR = 0
KIND_DIFFUSE = 1
KIND_TRANSMISSION = 2

_KIND_NAMES = {KIND_SPECULAR: "specular", KIND_DIFFUSE: "diffuse", KIND_TRANSMISSION: "transmission"}

CHUNK_RAYS = 1 << 16
DEDUP_TOL = 1e-6
# rays per edge fan relative to the launch budget of one source
EDGE_FAN_DIVISOR = 16
EDGE_FAN_MIN = 64
_FNV_OFFSET = np.uint64(14695981039346656037)
_FNV_PRIME = np.uint64(1099511628211)


@lru_cache(maxsize=8)
def fibonacci_directions(n: int) -> np.ndarray:
    """Deterministic, near-uniform unit vectors on the sphere."""
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * (math.pi * (3.0 - math.sqrt(5.0)))
    dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    dirs.setflags(write=False)
    return dirs


def capture_angle(n_rays: int) -> float:
    """Angular ray spacing; capture radius is this times the unfolded path length."""
    return math.sqrt(4.0 * math.pi / n_rays)


def _jittered(dirs: np.ndarray, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    return np.ascontiguousarray(dirs @ q.T)


@njit(cache=True, inline="always")
def _mix(h, plane, kind):
    return (h ^ np.uint64(plane * 4 + kind + 1)) * _FNV_PRIME


@njit(cache=True)
def _trace_chunk(origin, dirs, first_ray, target, max_depth, max_trans, cap_ang, ray_weight,
                 specular, refraction, diffuse, diffraction,
                 v0, e1, e2, lo, hi, ostart, oend, nrm, tri_plane, tri_pec, tri_scatters,
                 tri_edges, edge_a, edge_b, eps,
                 cap_ray, cap_mask, cap_depth, cap_hash,
                 dif_ray, dif_depth, dif_hash, dif_w, dif_pt, edge_lit):
    n_cap = 0
    n_dif = 0
    overflow = False
    size = 2 * max_depth + 4
    st_pos = np.empty((size, 3))
    st_dir = np.empty((size, 3))
    st_depth = np.empty(size, np.int64)
    st_mask = np.empty(size, np.int64)
    st_trans = np.empty(size, np.int64)
    st_hash = np.empty(size, np.uint64)
    st_len = np.empty(size)
    pos = np.empty(3)
    d = np.empty(3)
    hit = np.empty(3)
    for ray in range(dirs.shape[0]):
        sp = 0
        st_pos[0] = origin
        st_dir[0] = dirs[ray]
        st_depth[0] = 0
        st_mask[0] = 0
        st_trans[0] = 0
        st_hash[0] = _FNV_OFFSET
        st_len[0] = 0.0
        sp = 1
        while sp > 0:
            sp -= 1
            pos[:] = st_pos[sp]
            d[:] = st_dir[sp]
            depth = st_depth[sp]
            mask = st_mask[sp]
            ntrans = st_trans[sp]
            h = st_hash[sp]
            length = st_len[sp]
            k, t = nearest_hit(pos, d, eps, 1e30, v0, e1, e2, lo, hi, ostart, oend)
            if depth >= 1:
                wx = target[0] - pos[0]
                wy = target[1] - pos[1]
                wz = target[2] - pos[2]
                s = wx * d[0] + wy * d[1] + wz * d[2]
                if s > 0.0:
                    if k >= 0 and s > t:
                        s = t
                    qx = wx - s * d[0]
                    qy = wy - s * d[1]
                    qz = wz - s * d[2]
                    dist = math.sqrt(qx * qx + qy * qy + qz * qz)
                    if dist <= (length + s) * cap_ang:
                        if n_cap < cap_ray.shape[0]:
                            cap_ray[n_cap] = first_ray + ray
                            cap_mask[n_cap] = mask
                            cap_depth[n_cap] = depth
                            cap_hash[n_cap] = h
                            n_cap += 1
                        else:
                            overflow = True
            if k < 0 or depth >= max_depth:
                continue
            for a in range(3):
                hit[a] = pos[a] + t * d[a]
            lp = length + t
            n = nrm[k]
            pl = tri_plane[k]
            if diffraction:
                for j in range(3):
                    e = tri_edges[k, j]
                    if e >= 0 and not edge_lit[e]:
                        ax = edge_b[e, 0] - edge_a[e, 0]
                        ay = edge_b[e, 1] - edge_a[e, 1]
                        az = edge_b[e, 2] - edge_a[e, 2]
                        px = hit[0] - edge_a[e, 0]
                        py = hit[1] - edge_a[e, 1]
                        pz = hit[2] - edge_a[e, 2]
                        u = (px * ax + py * ay + pz * az) / (ax * ax + ay * ay + az * az)
                        u = min(1.0, max(0.0, u))
                        rx_ = px - u * ax
                        ry_ = py - u * ay
                        rz_ = pz - u * az
                        if math.sqrt(rx_ * rx_ + ry_ * ry_ + rz_ * rz_) <= lp * cap_ang:
                            edge_lit[e] = True
            dn = d[0] * n[0] + d[1] * n[1] + d[2] * n[2]
            if diffuse and mask == 0 and tri_scatters[k]:
                vx = target[0] - hit[0]
                vy = target[1] - hit[1]
                vz = target[2] - hit[2]
                d2 = math.sqrt(vx * vx + vy * vy + vz * vz)
                if d2 > eps:
                    cos_s = (vx * n[0] + vy * n[1] + vz * n[2]) / d2
                    # the receiver must be on the illuminated side
                    if cos_s * dn < 0.0:
                        ratio = (lp + d2) / d2
                        if n_dif < dif_w.shape[0]:
                            dif_ray[n_dif] = first_ray + ray
                            dif_depth[n_dif] = depth
                            dif_hash[n_dif] = _mix(h, pl, 1)
                            dif_w[n_dif] = ray_weight * abs(cos_s) * ratio * ratio / math.pi
                            dif_pt[n_dif] = hit
                            n_dif += 1
                        else:
                            overflow = True
            if refraction and not tri_pec[k] and ntrans < max_trans:
                st_pos[sp] = hit
                st_dir[sp] = d
                st_depth[sp] = depth + 1
                st_mask[sp] = mask | (1 << depth)
                st_trans[sp] = ntrans + 1
                st_hash[sp] = _mix(h, pl, 2)
                st_len[sp] = lp
                sp += 1
            if specular:
                st_pos[sp] = hit
                for a in range(3):
                    st_dir[sp, a] = d[a] - 2.0 * dn * n[a]
                st_depth[sp] = depth + 1
                st_mask[sp] = mask
                st_trans[sp] = ntrans
                st_hash[sp] = _mix(h, pl, 0)
                st_len[sp] = lp
                sp += 1
    return n_cap, n_dif, overflow


@njit(cache=True)
def _replay(origin, direction, mask, n_hits, v0, e1, e2, lo, hi, ostart, oend, nrm, eps):
    """Re-trace one branch; returns the triangle index and point of each hit."""
    tris = -np.ones(n_hits, np.int64)
    pts = np.zeros((n_hits, 3))
    pos = origin.copy()
    d = direction.copy()
    for i in range(n_hits):
        k, t = nearest_hit(pos, d, eps, 1e30, v0, e1, e2, lo, hi, ostart, oend)
        if k < 0:
            break
        for a in range(3):
            pos[a] = pos[a] + t * d[a]
        tris[i] = k
        pts[i] = pos
        if not (mask >> i) & 1:
            n = nrm[k]
            dn = d[0] * n[0] + d[1] * n[1] + d[2] * n[2]
            for a in range(3):
                d[a] = d[a] - 2.0 * dn * n[a]
    return tris, pts


class _Tracer:
    """Runs the kernel over all rays from one source and collects candidates."""

    def __init__(self, index, di: DetailIndexConfig, dirs: np.ndarray):
        self.index = index
        self.di = di
        self.dirs = dirs
        self.cap_ang = capture_angle(len(dirs))
        self.edge_lit = np.zeros(len(index.edge_a), dtype=np.bool_)

    def _kernel_geometry(self):
        ix = self.index
        return (ix.v0, ix.e1, ix.e2, ix.obj_lo, ix.obj_hi, ix.obj_start, ix.obj_end, ix.normal,
                ix.tri_plane, ix.tri_pec, ix.tri_scatters, ix.tri_edges, ix.edge_a, ix.edge_b)

    def run(self, origin: np.ndarray, target: np.ndarray, diffuse: bool):
        di = self.di
        geo = self._kernel_geometry()
        n = len(self.dirs)
        ray_weight = 4.0 * math.pi / n
        captures: dict[int, tuple[int, int, int]] = {}
        groups: dict[int, list] = {}
        for start in range(0, n, CHUNK_RAYS):
            chunk = self.dirs[start:start + CHUNK_RAYS]
            cap_size = 4 * len(chunk) + 64
            dif_size = (len(chunk) * di.max_interactions + 64) if diffuse else 1
            while True:
                cap_ray = np.empty(cap_size, np.int64)
                cap_mask = np.empty(cap_size, np.int64)
                cap_depth = np.empty(cap_size, np.int64)
                cap_hash = np.empty(cap_size, np.uint64)
                dif_ray = np.empty(dif_size, np.int64)
                dif_depth = np.empty(dif_size, np.int64)
                dif_hash = np.empty(dif_size, np.uint64)
                dif_w = np.empty(dif_size)
                dif_pt = np.empty((dif_size, 3))
                n_cap, n_dif, overflow = _trace_chunk(
                    origin, chunk, start, target, di.max_interactions, di.max_transmissions,
                    self.cap_ang, ray_weight, di.enable_specular, di.enable_refraction, diffuse,
                    di.enable_diffraction, *geo, EPS_GEOM,
                    cap_ray, cap_mask, cap_depth, cap_hash,
                    dif_ray, dif_depth, dif_hash, dif_w, dif_pt, self.edge_lit)
                if not overflow:
                    break
                cap_size *= 4
                dif_size *= 4
            if n_cap:
                uniq, first = np.unique(cap_hash[:n_cap], return_index=True)
                for h, i in zip(uniq.tolist(), first.tolist()):
                    if h not in captures:
                        captures[h] = (int(cap_ray[i]), int(cap_mask[i]), int(cap_depth[i]))
            if n_dif:
                uniq, first, inv = np.unique(dif_hash[:n_dif], return_index=True, return_inverse=True)
                w = dif_w[:n_dif]
                sw = np.bincount(inv, weights=w, minlength=len(uniq))
                swp = np.stack([np.bincount(inv, weights=w * dif_pt[:n_dif, a], minlength=len(uniq))
                                for a in range(3)], axis=1)
                for g, h in enumerate(uniq.tolist()):
                    if h in groups:
                        groups[h][0] += sw[g]
                        groups[h][1] += swp[g]
                    else:
                        i = first[g]
                        groups[h] = [sw[g], swp[g].copy(), int(dif_ray[i]), int(dif_depth[i])]
        return captures, groups

    def sequence(self, origin: np.ndarray, ray: int, mask: int, n_hits: int):
        ix = self.index
        tris, pts = _replay(origin, np.ascontiguousarray(self.dirs[ray]), mask, n_hits,
                            ix.v0, ix.e1, ix.e2, ix.obj_lo, ix.obj_hi, ix.obj_start, ix.obj_end,
                            ix.normal, EPS_GEOM)
        if n_hits and tris[-1] < 0:
            return None, None
        seq = tuple(
            (int(ix.tri_plane[k]), KIND_TRANSMISSION if (mask >> i) & 1 else KIND_SPECULAR)
            for i, k in enumerate(tris.tolist())
        )
        return seq, pts


def _mirror(point: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    return point - 2.0 * (point @ normal - offset) * normal


def _solve_chain(index, src: np.ndarray, dst: np.ndarray, seq) -> Optional[np.ndarray]:
    """Exact interaction points of a specular/transmission sequence, or None."""
    refl = [pl for pl, kind in seq if kind == KIND_SPECULAR]
    images = [src]
    for pl in refl:
        images.append(_mirror(images[-1], index.plane_normal[pl], index.plane_offset[pl]))
    refl_pts: list[np.ndarray] = [None] * len(refl)
    target = dst
    for j in range(len(refl) - 1, -1, -1):
        pl = refl[j]
        n, c = index.plane_normal[pl], index.plane_offset[pl]
        image = images[j + 1]
        dt = target @ n - c
        dm = image @ n - c
        if dt * dm >= 0.0:
            return None
        x = target + dt / (dt - dm) * (image - target)
        refl_pts[j] = x
        target = x
    anchors = [src] + refl_pts + [dst]
    points = [src]
    seg = 0
    t_prev = 0.0
    for pl, kind in seq:
        a, b = anchors[seg], anchors[seg + 1]
        if kind == KIND_SPECULAR:
            points.append(b)
            seg += 1
            t_prev = 0.0
            continue
        n, c = index.plane_normal[pl], index.plane_offset[pl]
        da, db = a @ n - c, b @ n - c
        if da * db >= 0.0:
            return None
        t = da / (da - db)
        if t <= t_prev:
            return None
        t_prev = t
        points.append(a + t * (b - a))
    points.append(dst)
    return np.array(points)


def _validate(index, points: np.ndarray, seq) -> Optional[list[int]]:
    """Patch indices of the interaction points if the chain is physically valid."""
    patches = []
    for i, (pl, kind) in enumerate(seq):
        p = points[i + 1]
        patch = index.on_plane_patch(pl, p)
        if patch is None:
            return None
        n, c = index.plane_normal[pl], index.plane_offset[pl]
        side_prev = points[i] @ n - c
        side_next = points[i + 2] @ n - c
        if abs(side_prev) < 1e-9 or abs(side_next) < 1e-9:
            return None
        same_side = side_prev * side_next > 0.0
        if same_side != (kind in (KIND_SPECULAR, KIND_DIFFUSE)):
            return None
        patches.append(patch)
    seg = np.diff(points, axis=0)
    if np.any(np.linalg.norm(seg, axis=1) <= 2.0 * EPS_GEOM):
        return None
    if not np.all(index.segments_clear(points[:-1], points[1:])):
        return None
    return patches


class _PathBuilder:
    def __init__(self, scene: Scene, di: DetailIndexConfig):
        self.scene = scene
        self.index = scene.index
        self.di = di
        self.wavelength = scene.wavelength

    def material(self, plane: int):
        return self.scene.materials[self.index.plane_material[plane]]

    def build(self, points: np.ndarray, seq, patches, amplitudes=None) -> PropagationPath:
        """Attach interaction matrices; ``amplitudes`` overrides diffuse/diffraction strength."""
        seg = np.diff(points, axis=0)
        dirs = seg / np.linalg.norm(seg, axis=1, keepdims=True)
        inters = []
        for i, (pl, kind) in enumerate(seq):
            k_in, k_out = dirs[i], dirs[i + 1]
            n = self.index.plane_normal[pl] if pl >= 0 else None
            if kind == KIND_SPECULAR:
                mat = self.material(pl)
                cos_i = abs(float(k_in @ n))
                gs, gp = pec_reflection() if mat.is_perfect_conductor else fresnel_reflection(mat.permittivity, cos_i)
                if self.di.enable_diffuse and mat.scattering_coefficient > 0:
                    scale = math.sqrt(1.0 - mat.scattering_coefficient**2)
                    gs, gp = gs * scale, gp * scale
                jones = reflection_jones(k_in, k_out, n, gs, gp)
                name = "specular"
            elif kind == KIND_TRANSMISSION:
                mat = self.material(pl)
                if mat.is_perfect_conductor:
                    ts = tp = 0j
                else:
                    ts, tp = slab_transmission(mat.permittivity, float(k_in @ n), mat.slab_thickness,
                                               self.wavelength)
                jones = transmission_jones(k_in, n, ts, tp)
                name = "transmission"
            else:
                jones = scalar_jones(k_in, k_out, amplitudes[i])
                name = "diffuse" if kind == KIND_DIFFUSE else "diffraction"
            inters.append(Interaction(name, points[i + 1].copy(), patches[i], jones))
        return PropagationPath(points, tuple(inters))


KIND_DIFFRACTION = 3


def _diffraction_path(builder: _PathBuilder, tx, rx):
    # every wedge edge is a candidate so the choice does not depend on which
    # other mechanisms lit it; visibility is checked on the final segments
    index = builder.index
    if not len(index.edge_a):
        return None
    los = rx - tx
    d = float(np.linalg.norm(los))
    u = los / d
    best = []
    for e in range(len(index.edge_a)):
        a, b = index.edge_a[e], index.edge_b[e]
        q, s_los = _closest_on_edge(tx, u, d, a, b)
        p_los = tx + s_los * u
        best.append((float(np.linalg.norm(q - p_los)), int(e), q, s_los))
    best.sort(key=lambda item: (item[0], item[1]))
    lam = builder.wavelength
    for h, e, q, s_los in best:
        if not (EPS_GEOM < s_los < d - EPS_GEOM):
            continue
        pts = np.array([tx, q, rx])
        if not np.all(index.segments_clear(pts[:-1], pts[1:])):
            continue
        d1, d2 = s_los, d - s_los
        nu = h * math.sqrt(2.0 * d / (lam * d1 * d2))
        amp = abs(knife_edge_coefficient(nu))
        patch = int(index.tri_patch[index.edge_tri[e]])
        return builder.build(pts, ((-1, KIND_DIFFRACTION),), [patch], amplitudes=[amp])
    return None


def _edge_outward(index, e: int) -> np.ndarray:
    """Unit direction pointing off the edge, away from the faces that meet there."""
    a, b = index.edge_a[e], index.edge_b[e]
    v = (b - a) / np.linalg.norm(b - a)
    out = np.zeros(3)
    for k in np.flatnonzero((index.tri_edges == e).any(axis=1)).tolist():
        centroid = index.v0[k] + (index.e1[k] + index.e2[k]) / 3.0
        inward = centroid - a
        inward = inward - (inward @ v) * v
        out -= inward / np.linalg.norm(inward)
    norm = float(np.linalg.norm(out))
    return out / norm if norm > 1e-9 else np.zeros(3)


def _edge_source_paths(builder: _PathBuilder, tx, rx, lit: np.ndarray) -> list[PropagationPath]:
    """Diffraction at a lit edge followed by a specular chain to the receiver."""
    index = builder.index
    di = builder.di
    edges = np.flatnonzero(lit)
    if not len(edges):
        return []
    fan_di = replace(di, max_interactions=di.max_interactions - 1, enable_refraction=False,
                     enable_diffuse=False, enable_diffraction=False)
    fan = _Tracer(index, fan_di, fibonacci_directions(max(EDGE_FAN_MIN, di.rays_per_source // EDGE_FAN_DIVISOR)))
    lam = builder.wavelength
    shadowed: dict = {}
    out = []
    for e in edges.tolist():
        a, b = index.edge_a[e], index.edge_b[e]
        origin = 0.5 * (a + b) + 10.0 * EPS_GEOM * _edge_outward(index, e)
        captures, _ = fan.run(origin, rx, False)
        seqs = set()
        for ray, mask, depth in captures.values():
            seq, _ = fan.sequence(origin, ray, mask, depth)
            if seq:
                seqs.add(seq)
        for seq in sorted(seqs):
            if seq not in shadowed:
                direct = _solve_chain(index, tx, rx, seq)
                shadowed[seq] = direct is None or _validate(index, direct, seq) is None
            if not shadowed[seq]:
                continue
            image = rx
            for pl, _ in reversed(seq):
                image = _mirror(image, index.plane_normal[pl], index.plane_offset[pl])
            span = image - tx
            dist = float(np.linalg.norm(span))
            if dist <= 2.0 * EPS_GEOM:
                continue
            u = span / dist
            q, s_los = _closest_on_edge(tx, u, dist, a, b)
            if not (EPS_GEOM < s_los < dist - EPS_GEOM):
                continue
            chain = _solve_chain(index, q, rx, seq)
            if chain is None:
                continue
            patches = _validate(index, chain, seq)
            if patches is None or np.linalg.norm(q - tx) <= 2.0 * EPS_GEOM or not index.segment_clear(tx, q):
                continue
            h = float(np.linalg.norm(q - (tx + s_los * u)))
            nu = h * math.sqrt(2.0 * dist / (lam * s_los * (dist - s_los)))
            amp = abs(knife_edge_coefficient(nu))
            points = np.vstack([tx[None, :], chain])
            full = ((-1, KIND_DIFFRACTION),) + seq
            out.append(builder.build(points, full, [int(index.tri_patch[index.edge_tri[e]])] + patches,
                                     amplitudes=[amp] + [None] * len(seq)))
    return out


def _closest_on_edge(origin, u, length, a, b):
    """Point on edge [a, b] closest to segment origin + s u, s in [0, length]."""
    v = b - a
    w0 = a - origin
    aa, bb, cc = float(v @ v), float(v @ u), 1.0
    dd, ee = float(v @ w0), float(u @ w0)
    den = aa * cc - bb * bb
    if den > 1e-15:
        t = (bb * ee - cc * dd) / den
    else:
        t = 0.0
    t = min(1.0, max(0.0, t))
    q = a + t * v
    s = min(length, max(0.0, float((q - origin) @ u)))
    # one refinement step back onto the edge
    p = origin + s * u
    t = min(1.0, max(0.0, float((p - a) @ v) / aa))
    q = a + t * v
    s = min(length, max(0.0, float((q - origin) @ u)))
    return q, s


def _dedup(paths: Sequence[PropagationPath]) -> list[PropagationPath]:
    buckets: dict = {}
    out = []
    for p in canonical_order(paths):
        key = (p.kinds, tuple(np.round(p.vertices[1:-1] / 1e-4).astype(np.int64).ravel()))
        bucket = buckets.setdefault(key, [])
        if any(np.max(np.abs(q.vertices - p.vertices)) <= DEDUP_TOL for q in bucket):
            continue
        bucket.append(p)
        out.append(p)
    return out


def shoot_and_bounce(
    scene: Scene,
    tx,
    rx,
    di: DetailIndexConfig,
    seed: int = 0,
    *,
    tx_pattern: AntennaPattern = ISOTROPIC,
    rx_pattern: AntennaPattern = ISOTROPIC,
    link: Optional[tuple[str, str]] = None,
    jitter: bool = False,
) -> list[PropagationPath]:
    """Find the valid propagation paths between two antenna positions.

    Returns deduplicated paths in canonical order with gains filled in.  The
    result depends only on the inputs (and ``seed`` when ``jitter`` rotates
    the launch lattice).
    """
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if np.linalg.norm(tx - rx) <= EPS_GEOM:
        raise ValueError("transmitter and receiver coincide")
    index = scene.index
    builder = _PathBuilder(scene, di)
    found: list[PropagationPath] = []

    los_clear = index.segment_clear(tx, rx)
    if di.enable_los and los_clear:
        found.append(PropagationPath(np.array([tx, rx]), ()))

    tracing = index.n_tris > 0 and di.max_interactions > 0 and (
        di.enable_specular or di.enable_refraction or di.enable_diffuse or di.enable_diffraction)
    if tracing:
        dirs = fibonacci_directions(di.rays_per_source)
        if jitter:
            dirs = _jittered(dirs, seed)
        fwd = _Tracer(index, di, dirs)
        captures, groups = fwd.run(tx, rx, di.enable_diffuse)
        bwd = _Tracer(index, di, dirs)
        back_captures, _ = bwd.run(rx, tx, False)

        candidates = set()
        for ray, mask, depth in captures.values():
            seq, _ = fwd.sequence(tx, ray, mask, depth)
            if seq:
                candidates.add(seq)
        for ray, mask, depth in back_captures.values():
            seq, _ = bwd.sequence(rx, ray, mask, depth)
            if seq:
                candidates.add(tuple(reversed(seq)))
        for seq in sorted(candidates):
            if any(kind == KIND_SPECULAR for _, kind in seq) and not di.enable_specular:
                continue
            if any(kind == KIND_TRANSMISSION for _, kind in seq) and not di.enable_refraction:
                continue
            points = _solve_chain(index, tx, rx, seq)
            if points is None:
                continue
            patches = _validate(index, points, seq)
            if patches is None:
                continue
            found.append(builder.build(points, seq, patches))

        for h in sorted(groups):
            path = _diffuse_path(builder, fwd, tx, rx, groups[h])
            if path is not None:
                found.append(path)

        if di.enable_diffraction and not los_clear:
            path = _diffraction_path(builder, tx, rx)
            if path is not None:
                found.append(path)
        if di.enable_diffraction and di.enable_specular and di.max_interactions > 1:
            found.extend(_edge_source_paths(builder, tx, rx, fwd.edge_lit))

    lam = scene.wavelength
    out = []
    for p in _dedup(found):
        g = eval_path_gain(p, tx_pattern, rx_pattern, lam)
        out.append(PropagationPath(p.vertices, p.interactions, link, g))
    return out


def _diffuse_path(builder: _PathBuilder, tracer: _Tracer, tx, rx, group) -> Optional[PropagationPath]:
    index = builder.index
    weight, weighted_sum, ray, depth = group
    seq, pts = tracer.sequence(tx, ray, 0, depth + 1)
    if seq is None:
        return None
    plane = seq[-1][0]
    n, c = index.plane_normal[plane], index.plane_offset[plane]
    x = weighted_sum / weight
    x = x - (x @ n - c) * n
    if index.on_plane_patch(plane, x) is None:
        x = pts[-1]
    prefix = seq[:-1]
    chain = _solve_chain(index, tx, x, prefix)
    if chain is None:
        return None
    points = np.vstack([chain, rx[None, :]])
    full = prefix + ((plane, KIND_DIFFUSE),)
    patches = _validate(index, points, full)
    if patches is None:
        return None
    s = builder.material(plane).scattering_coefficient
    amps = [None] * len(prefix) + [s * math.sqrt(min(1.0, weight))]
    return builder.build(points, full, patches, amplitudes=amps)
