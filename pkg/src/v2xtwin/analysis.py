"""Position-error sensitivity of the predicted channel.

Perturbed entities are displaced by a vector drawn from the annulus
``eps_k / 3 <= |e| <= eps_k / 2`` with ``eps_k = k * eps_max``; the radius is
uniform on that interval (not uniform in area) and the angle uniform on
[0, 2 pi).  Headings are never perturbed.

For every seed and instant one unit draw (u, theta) is made and reused for
all k, so a larger k moves the blocker further in the same direction.  This
pairing keeps the k-to-k comparison low-variance.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .channel.detail import DetailIndexConfig
from .channel.links import realize_link
from .scenario import place
from .scene.model import Pose, Scene

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("k", "rmse_db", "eta", "tp", "tn", "n", "excluded_inf", "di", "seed", "scene_hash")
DEFAULT_K_GRID = tuple(round(0.05 * i, 2) for i in range(21))


@dataclass(frozen=True)
class PerturbationSpec:
    k: float
    eps_max: float = 1.0
    seed: int = 0
    n_samples: int = 1

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise ValueError("k must lie in [0, 1]")
        if not self.eps_max > 0:
            raise ValueError("eps_max must be positive")

    @property
    def eps_k(self) -> float:
        return self.k * self.eps_max


def annulus_displacement(eps_k: float, u: float, theta: float) -> tuple[float, float]:
    """Map a unit draw (u in [0, 1], theta) to a displacement in the annulus."""
    if eps_k == 0.0:
        return 0.0, 0.0
    r = eps_k * (1.0 / 3.0 + u / 6.0)
    return r * math.cos(theta), r * math.sin(theta)


def sample_displacement(spec: PerturbationSpec, rng: np.random.Generator) -> tuple[float, float]:
    if spec.k == 0.0:
        return 0.0, 0.0
    u = rng.uniform(0.0, 1.0)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    return annulus_displacement(spec.eps_k, u, theta)


def sample_displacements(spec: PerturbationSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent displacements as an (n, 2) array."""
    if spec.k == 0.0:
        return np.zeros((n, 2))
    r = rng.uniform(spec.eps_k / 3.0, spec.eps_k / 2.0, size=n)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)


def perturb_pose(pose: Pose, e: tuple[float, float]) -> Pose:
    return Pose(pose.x + e[0], pose.y + e[1], pose.z, pose.yaw)


def rmse_with_exclusions(reference: Sequence[float], perturbed: Sequence[float]) -> tuple[float, int]:
    """RMSE in dB over pairs where both values are finite, and the number of excluded pairs.

    NaN is returned when every pair is excluded.
    """
    if len(reference) != len(perturbed):
        raise ValueError("traces must have equal length")
    if len(reference) == 0:
        raise ValueError("empty traces")
    ref = np.asarray(reference, dtype=float)
    per = np.asarray(perturbed, dtype=float)
    ok = np.isfinite(ref) & np.isfinite(per)
    excluded = int(len(ref) - ok.sum())
    if not ok.any():
        return math.nan, excluded
    return float(np.sqrt(np.mean((per[ok] - ref[ok]) ** 2))), excluded


def rmse_k(reference: Sequence[float], perturbed: Sequence[float]) -> float:
    return rmse_with_exclusions(reference, perturbed)[0]


@dataclass(frozen=True)
class Agreement:
    eta: float
    tp: int
    tn: int
    fp: int  # perturbed says LoS, reference does not
    fn: int
    n: int


def eta_k(reference_los: Sequence[bool], perturbed_los: Sequence[bool]) -> Agreement:
    if len(reference_los) != len(perturbed_los):
        raise ValueError("traces must have equal length")
    if len(reference_los) == 0:
        raise ValueError("empty traces")
    ref = np.asarray(reference_los, dtype=bool)
    per = np.asarray(perturbed_los, dtype=bool)
    tp = int(np.sum(ref & per))
    tn = int(np.sum(~ref & ~per))
    fp = int(np.sum(~ref & per))
    fn = int(np.sum(ref & ~per))
    n = len(ref)
    return Agreement((tp + tn) / n, tp, tn, fp, fn, n)


def scene_hash(scene: Scene) -> str:
    h = hashlib.sha256()
    h.update(repr(scene.carrier_frequency).encode())
    for p in scene.patches:
        h.update(np.asarray(p.vertices, dtype=float).tobytes())
        h.update(f"{p.material}|{p.object_id}".encode())
    for name in sorted(scene.materials):
        h.update(repr(asdict(scene.materials[name])).encode())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class SweepRow:
    k: float
    rmse_db: float
    eta: float
    tp: int
    tn: int
    n: int
    excluded_inf: int
    di: int
    seed: int
    scene_hash: str


@dataclass
class SweepResult:
    rows: list[SweepRow]
    metadata: dict = field(default_factory=dict)

    def by_k(self) -> dict[float, list[SweepRow]]:
        out: dict[float, list[SweepRow]] = {}
        for r in self.rows:
            out.setdefault(r.k, []).append(r)
        return out

    def summary(self) -> list[dict]:
        """Per-k means over seeds (NaN RMSE values skipped)."""
        out = []
        for k, rows in sorted(self.by_k().items()):
            rm = [r.rmse_db for r in rows if not math.isnan(r.rmse_db)]
            out.append({
                "k": k,
                "rmse_db": float(np.mean(rm)) if rm else math.nan,
                "eta": float(np.mean([r.eta for r in rows])),
                "seeds": len(rows),
            })
        return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in result.rows:
            w.writerow([_fmt(getattr(r, c)) for c in SWEEP_COLUMNS])


def write_sweep_metadata(result: SweepResult, path) -> None:
    with open(path, "w") as fh:
        json.dump({**result.metadata, "summary": result.summary()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _unit_draws(seed: int, n_instants: int, entities: Sequence[str]) -> np.ndarray:
    """(instants, entities, 2) array of (u, theta) shared by every k."""
    rng = np.random.default_rng([seed, 0x5EED])
    u = rng.uniform(0.0, 1.0, size=(n_instants, len(entities)))
    theta = rng.uniform(0.0, 2.0 * math.pi, size=(n_instants, len(entities)))
    return np.stack([u, theta], axis=-1)


def sweep(
    scene: Scene,
    frames: Sequence[Mapping[str, Pose]],
    templates: Mapping[str, Optional[str]],
    link: tuple[str, str],
    di: DetailIndexConfig,
    k_grid: Sequence[float] = DEFAULT_K_GRID,
    seeds: Sequence[int] = (0,),
    eps_max: float = 1.0,
    perturb: Sequence[str] = (),
    tx_power_dbm: float = 10.0,
    mode: str = "coherent",
) -> SweepResult:
    """RMSE_k and eta_k of the link for every (k, seed), rows sorted by k then seed.

    ``frames`` are the reference poses of every entity at each instant; only
    entities in ``perturb`` are displaced.  ``k = 0`` rows are the identity
    (RMSE 0, eta 1) without recomputation.
    """
    k_grid = sorted(float(k) for k in k_grid)
    for k in k_grid:
        PerturbationSpec(k, eps_max)
    perturb = sorted(perturb)
    h = scene_hash(scene)

    def evaluate(poses):
        real = realize_link(place(scene, poses, templates), link, di, tx_power_dbm, mode=mode)
        return real.rssi_dbm, real.los

    ref = [evaluate(f) for f in frames]
    ref_rssi = [r for r, _ in ref]
    ref_los = [l for _, l in ref]
    if all(ref_los) or not any(ref_los):
        log.warning("reference trajectory never changes LoS state on link %s", link)

    rows = []
    for seed in sorted(seeds):
        draws = _unit_draws(seed, len(frames), perturb)
        for k in k_grid:
            if k == 0.0:
                n = len(frames)
                excl = sum(1 for r in ref_rssi if not math.isfinite(r))
                agr = eta_k(ref_los, ref_los)
                rows.append(SweepRow(0.0, 0.0, 1.0, agr.tp, agr.tn, n, excl, di.level, seed, h))
                continue
            eps_k = k * eps_max
            rssi, los = [], []
            for i, frame in enumerate(frames):
                poses = dict(frame)
                for j, e in enumerate(perturb):
                    poses[e] = perturb_pose(frame[e], annulus_displacement(eps_k, *draws[i, j]))
                r, l = evaluate(poses)
                rssi.append(r)
                los.append(l)
            rmse, excl = rmse_with_exclusions(ref_rssi, rssi)
            agr = eta_k(ref_los, los)
            rows.append(SweepRow(k, rmse, agr.eta, agr.tp, agr.tn, agr.n, excl, di.level, seed, h))
    rows.sort(key=lambda r: (r.k, r.seed))
    meta = {
        "link": list(link),
        "di": di.level,
        "rays_per_source": di.rays_per_source,
        "eps_max_m": eps_max,
        "k_grid": k_grid,
        "seeds": sorted(seeds),
        "instants": len(frames),
        "perturbed": perturb,
        "scene_hash": h,
        "rssi_mode": mode,
        "radius_law": "uniform radius on [eps_k/3, eps_k/2]",
        "reference_los_fraction": float(np.mean(ref_los)) if ref_los else math.nan,
    }
    return SweepResult(rows, meta)


@dataclass(frozen=True)
class TrendCheck:
    metric: str
    k_from: float
    k_to: float
    mean_diff: float
    ci_low: float
    ci_high: float
    violated: bool


def monotonicity(result: SweepResult, n_boot: int = 2000, seed: int = 0,
                 level: float = 0.95) -> list[TrendCheck]:
    """Paired bootstrap check of neighbouring k values.

    RMSE must not decrease and eta must not increase; a step counts as a
    violation only when the whole confidence interval of the mean paired
    difference lies on the wrong side of zero.
    """
    rng = np.random.default_rng(seed)
    groups = result.by_k()
    ks = sorted(groups)
    out = []
    alpha = (1.0 - level) / 2.0
    for a, b in zip(ks, ks[1:]):
        ra = {r.seed: r for r in groups[a]}
        rb = {r.seed: r for r in groups[b]}
        common = sorted(set(ra) & set(rb))
        for metric, sign in (("rmse_db", 1.0), ("eta", -1.0)):
            d = np.array([getattr(rb[s], metric) - getattr(ra[s], metric) for s in common])
            d = d[np.isfinite(d)]
            if len(d) == 0:
                continue
            idx = rng.integers(0, len(d), size=(n_boot, len(d)))
            means = d[idx].mean(axis=1)
            lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
            bad = hi < 0.0 if sign > 0 else lo > 0.0
            out.append(TrendCheck(metric, a, b, float(d.mean()), float(lo), float(hi), bool(bad)))
    return out
