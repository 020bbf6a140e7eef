"""End-to-end latency bookkeeping and per-DI summaries.

The loop latency is the sum of sensing delay, uplink and downlink wire delay,
trajectory processing, request and response transport to the channel
engine, and the engine's own computation::

    e2e = m + 2 w + tp + 2 req + rt
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

COMPONENTS = ("tau_m", "tau_w", "tau_tp", "tau_req", "tau_rt", "tau_e2e")
IDENTITY_TOL_MS = 1.0


@dataclass(frozen=True)
class LatencyBreakdown:
    """Loop latency components in milliseconds."""

    tau_m: float
    tau_w: float
    tau_tp: float
    tau_req: float
    tau_rt: float
    tau_e2e: float
    di: int = 0

    @classmethod
    def from_components(cls, tau_m, tau_w, tau_tp, tau_req, tau_rt, di: int = 0) -> "LatencyBreakdown":
        return cls(tau_m, tau_w, tau_tp, tau_req, tau_rt, component_sum(tau_m, tau_w, tau_tp, tau_req, tau_rt), di)

    def component_sum(self) -> float:
        return component_sum(self.tau_m, self.tau_w, self.tau_tp, self.tau_req, self.tau_rt)

    def identity_holds(self, tol_ms: float = IDENTITY_TOL_MS) -> bool:
        return abs(self.tau_e2e - self.component_sum()) <= tol_ms

    def to_dict(self) -> dict:
        return asdict(self)


def component_sum(tau_m, tau_w, tau_tp, tau_req, tau_rt) -> float:
    return tau_m + 2.0 * tau_w + tau_tp + 2.0 * tau_req + tau_rt


def nearest_rank(values: Sequence[float], q: float) -> float:
    """q-quantile by the nearest-rank rule on the sorted sample."""
    if not values:
        raise ValueError("quantile of an empty sample")
    s = sorted(values)
    rank = max(1, math.ceil(q * len(s)))
    return s[rank - 1]


def latency_report(history: Iterable[LatencyBreakdown]) -> list[dict]:
    """Per-DI min/median/p95/max of each component, sorted by DI."""
    by_di: dict[int, list[LatencyBreakdown]] = {}
    for b in history:
        by_di.setdefault(b.di, []).append(b)
    rows = []
    for di in sorted(by_di):
        items = by_di[di]
        row = {"di": di, "n": len(items)}
        for comp in COMPONENTS:
            v = [getattr(b, comp) for b in items]
            row[f"{comp}_min"] = min(v)
            row[f"{comp}_median"] = float(np.median(v))
            row[f"{comp}_p95"] = nearest_rank(v, 0.95)
            row[f"{comp}_max"] = max(v)
        rows.append(row)
    return rows


def write_latency_report(rows: list[dict], path) -> None:
    fields = ["di", "n"] + [f"{c}_{s}" for c in COMPONENTS for s in ("min", "median", "p95", "max")]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def deadline_met(t_target_us: int, completion_us: int) -> bool:
    """Completion exactly at the target still counts as on time."""
    return completion_us <= t_target_us
