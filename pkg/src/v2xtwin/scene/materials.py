"""Electromagnetic material parameters.

Built-in materials follow the ITU-R P.2040 parametric model, where the real
relative permittivity is ``a * f**b`` and the conductivity is ``c * f**d``
(f in GHz, sigma in S/m).  The imaginary part follows from
``eps'' = 17.98 * sigma / f``.  At 60 GHz this gives:

=========  =====  ======  ======  =================
material   a      c       d       eps_r at 60 GHz
=========  =====  ======  ======  =================
concrete   5.24   0.0462  0.7822  5.24 - j0.341
wood       1.99   0.0047  1.0718  1.99 - j0.113
metal      (perfect electric conductor)
=========  =====  ======  ======  =================

The sign convention is ``eps_r = eps' + j*eps_imag`` with ``eps_imag <= 0`` for
lossy media, consistent with the ``exp(-j k d)`` propagation phase.
"""

from __future__ import annotations

from dataclasses import dataclass

# name: (a, b, c, d)
P2040_COEFFICIENTS: dict[str, tuple[float, float, float, float]] = {
    "concrete": (5.24, 0.0, 0.0462, 0.7822),
    "wood": (1.99, 0.0, 0.0047, 1.0718),
}


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    name: str
    relative_permittivity_real: float = 1.0
    relative_permittivity_imag: float = 0.0
    is_perfect_conductor: bool = False
    scattering_coefficient: float = 0.0
    # wall thickness used by the thin-slab transmission model
    slab_thickness: float = 0.1

    def __post_init__(self):
        if not self.is_perfect_conductor and self.relative_permittivity_real < 1.0:
            raise MaterialError(
                f"material {self.name!r}: relative permittivity {self.relative_permittivity_real} < 1"
            )
        if self.relative_permittivity_imag > 0.0:
            raise MaterialError(
                f"material {self.name!r}: imaginary permittivity must be <= 0 (lossy convention)"
            )
        if not 0.0 <= self.scattering_coefficient <= 1.0:
            raise MaterialError(
                f"material {self.name!r}: scattering coefficient {self.scattering_coefficient} outside [0, 1]"
            )
        if self.slab_thickness <= 0.0:
            raise MaterialError(f"material {self.name!r}: slab thickness must be positive")

    @property
    def permittivity(self) -> complex:
        return complex(self.relative_permittivity_real, self.relative_permittivity_imag)


def p2040_permittivity(a: float, b: float, c: float, d: float, frequency_hz: float) -> complex:
    """Complex relative permittivity from the P.2040 parametric model."""
    f_ghz = frequency_hz / 1e9
    eps_real = a * f_ghz**b
    sigma = c * f_ghz**d
    return complex(eps_real, -17.98 * sigma / f_ghz)


def builtin_material(name: str, frequency_hz: float, scattering: float = 0.0) -> Material:
    """Return one of the built-in materials (concrete, wood, metal) at ``frequency_hz``."""
    if name == "metal":
        return Material(name, is_perfect_conductor=True, scattering_coefficient=scattering)
    try:
        coeffs = P2040_COEFFICIENTS[name]
    except KeyError:
        raise MaterialError(f"no built-in material named {name!r}") from None
    eps = p2040_permittivity(*coeffs, frequency_hz)
    return Material(name, eps.real, eps.imag, False, scattering)
