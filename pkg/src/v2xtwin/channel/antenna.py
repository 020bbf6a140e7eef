"""Antenna pattern vectors in the spherical (theta, phi) polarization basis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def spherical_basis(k: np.ndarray) -> np.ndarray:
    """3x2 matrix whose columns are theta-hat and phi-hat for direction ``k``."""
    x, y, z = k
    theta = math.acos(max(-1.0, min(1.0, z)))
    phi = math.atan2(y, x)
    ct, st, cp, sp = math.cos(theta), math.sin(theta), math.cos(phi), math.sin(phi)
    return np.array([[ct * cp, -sp], [ct * sp, cp], [-st, 0.0]])


def direction_angles(k: np.ndarray) -> tuple[float, float]:
    """Zenith and azimuth (theta, phi) of a unit vector."""
    return math.acos(max(-1.0, min(1.0, float(k[2])))), math.atan2(float(k[1]), float(k[0]))


@dataclass(frozen=True)
class AntennaPattern:
    """Vertically polarized antenna.

    ``isotropic`` has unit amplitude everywhere.  ``directive`` has power gain
    ``2 (n + 1) cos^n(alpha)`` in the front hemisphere around ``boresight``
    and zero behind it, which radiates the same total power as the isotropic
    pattern.
    """

    kind: str = "isotropic"
    boresight: tuple[float, float, float] = (1.0, 0.0, 0.0)
    exponent: float = 0.0
    polarization: str = "vertical"
    _axis: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("isotropic", "directive"):
            raise ValueError(f"unknown antenna kind {self.kind!r}")
        if self.polarization != "vertical":
            raise ValueError("only vertical polarization is supported")
        if self.exponent < 0:
            raise ValueError("pattern exponent must be >= 0")
        axis = np.asarray(self.boresight, dtype=float)
        object.__setattr__(self, "_axis", axis / np.linalg.norm(axis))

    @property
    def peak_amplitude(self) -> float:
        if self.kind == "isotropic":
            return 1.0
        return math.sqrt(2.0 * (self.exponent + 1.0))

    def amplitude(self, k: np.ndarray) -> float:
        if self.kind == "isotropic":
            return 1.0
        cos_a = float(self._axis @ k)
        if cos_a <= 0.0:
            return 0.0
        return self.peak_amplitude * cos_a ** (0.5 * self.exponent)

    def pattern_vector(self, k: np.ndarray) -> np.ndarray:
        """(c_theta, c_phi) toward unit direction ``k``."""
        return np.array([self.amplitude(k), 0.0], dtype=complex)

    def field_vector(self, k: np.ndarray) -> np.ndarray:
        """The pattern vector expressed as a 3D polarization vector."""
        return spherical_basis(k) @ self.pattern_vector(k)


ISOTROPIC = AntennaPattern()
