"""Propagation paths, polarization matrices, path gains and impulse responses."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .antenna import AntennaPattern, direction_angles, spherical_basis

KINDS = ("specular", "diffuse", "transmission", "diffraction")

RSSI_FLOOR = -math.inf


@dataclass(frozen=True, eq=False)
class Interaction:
    kind: str
    point: np.ndarray
    patch: int
    jones: np.ndarray  # 2x2, maps incoming to outgoing (theta, phi) field components

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown interaction kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class PropagationPath:
    vertices: np.ndarray  # tx, interaction points..., rx
    interactions: tuple[Interaction, ...]
    link: Optional[tuple[str, str]] = None
    gain: complex = 0j
    length: float = field(init=False)
    delay: float = field(init=False)
    departure: tuple[float, float] = field(init=False)
    arrival: tuple[float, float] = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        seg = np.diff(v, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        length = float(lengths.sum())
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "delay", length / SPEED_OF_LIGHT)
        object.__setattr__(self, "departure", direction_angles(seg[0] / lengths[0]))
        object.__setattr__(self, "arrival", direction_angles(-seg[-1] / lengths[-1]))

    @property
    def n_interactions(self) -> int:
        return len(self.interactions)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(i.kind for i in self.interactions)

    @property
    def segment_directions(self) -> np.ndarray:
        seg = np.diff(self.vertices, axis=0)
        return seg / np.linalg.norm(seg, axis=1, keepdims=True)

    def sort_key(self):
        pts = tuple(np.round(self.vertices[1:-1], 9).ravel())
        return (round(self.length, 12), self.kinds, pts)

    def with_gain(self, gain: complex) -> "PropagationPath":
        return PropagationPath(self.vertices, self.interactions, self.link, complex(gain))


@dataclass(frozen=True)
class Tap:
    delay: float
    gain: complex


def _cross(a, b) -> np.ndarray:
    # np.cross is slow for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _perpendicular(k: np.ndarray) -> np.ndarray:
    a = np.array([1.0, 0.0, 0.0]) if abs(k[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    s = _cross(k, a)
    return s / np.linalg.norm(s)


def _s_vector(k_in: np.ndarray, normal: np.ndarray) -> np.ndarray:
    s = _cross(k_in, normal)
    norm = np.linalg.norm(s)
    if norm < 1e-12:
        return _perpendicular(k_in)
    return s / norm


def reflection_jones(k_in, k_out, normal, gamma_s: complex, gamma_p: complex) -> np.ndarray:
    """2x2 reflection matrix between the spherical bases of ``k_in`` and ``k_out``."""
    s = _s_vector(k_in, normal)
    p_in = _cross(s, k_in)
    p_out = _cross(s, k_out)
    op = gamma_s * np.outer(s, s) + gamma_p * np.outer(p_out, p_in)
    return spherical_basis(k_out).T @ op @ spherical_basis(k_in)


def transmission_jones(k, normal, t_s: complex, t_p: complex) -> np.ndarray:
    s = _s_vector(k, normal)
    p = _cross(s, k)
    op = t_s * np.outer(s, s) + t_p * np.outer(p, p)
    basis = spherical_basis(k)
    return basis.T @ op @ basis


def scalar_jones(k_in, k_out, amplitude: float) -> np.ndarray:
    """Depolarization-free redirection: project the field onto the new transverse plane."""
    return amplitude * (spherical_basis(k_out).T @ spherical_basis(k_in)).astype(complex)


def eval_path_matrix(path: PropagationPath, wavelength: float) -> np.ndarray:
    """2x2 propagation matrix: spreading and phase over d_p times the interaction matrices.

    Interaction matrices are applied in path order, so the first interaction
    acts on the transmitted field first.
    """
    d = path.length
    a = np.eye(2, dtype=complex)
    for inter in path.interactions:
        a = inter.jones @ a
    phase = cmath.exp(-2j * math.pi * math.fmod(d / wavelength, 1.0))
    return (wavelength / (4.0 * math.pi * d)) * phase * a


def eval_path_gain(path: PropagationPath, tx_pattern: AntennaPattern,
                   rx_pattern: AntennaPattern, wavelength: float) -> complex:
    """Scalar baseband gain c_R^H A c_T of one path."""
    dirs = path.segment_directions
    k_first, k_last = dirs[0], dirs[-1]
    c_t = tx_pattern.pattern_vector(k_first)
    # receiver pattern is defined toward the arrival direction; express it in
    # the basis of the incoming segment
    c_r = spherical_basis(k_last).T @ rx_pattern.field_vector(-k_last)
    a = eval_path_matrix(path, wavelength)
    return complex(np.conj(c_r) @ a @ c_t)


def canonical_order(paths: Sequence[PropagationPath]) -> list[PropagationPath]:
    return sorted(paths, key=lambda p: p.sort_key())


def build_cir(paths: Sequence[PropagationPath]) -> list[Tap]:
    """One tap per path, ordered by delay (ties broken by path geometry)."""
    return [Tap(p.delay, p.gain) for p in canonical_order(paths)]


def rssi_from_paths(paths: Sequence[PropagationPath], tx_power_dbm: float,
                    mode: str = "coherent") -> float:
    """Received power in dBm, or -inf when nothing arrives.

    ``coherent`` sums complex gains (narrowband, small-scale fading kept);
    ``incoherent`` sums powers.
    """
    if mode not in ("coherent", "incoherent"):
        raise ValueError(f"unknown RSSI mode {mode!r}")
    if not paths:
        return RSSI_FLOOR
    gains = np.array([p.gain for p in canonical_order(paths)], dtype=complex)
    if mode == "coherent":
        power = abs(gains.sum()) ** 2
    else:
        power = float(np.sum(np.abs(gains) ** 2))
    if power <= 0.0:
        return RSSI_FLOOR
    return tx_power_dbm + 10.0 * math.log10(power)


def rms_delay_spread(taps: Sequence[Tap]) -> float:
    if not taps:
        return 0.0
    w = np.array([abs(t.gain) ** 2 for t in taps])
    total = w.sum()
    if total <= 0.0:
        return 0.0
    tau = np.array([t.delay for t in taps])
    mean = float(w @ tau / total)
    var = float(w @ (tau - mean) ** 2 / total)
    return math.sqrt(max(var, 0.0))
