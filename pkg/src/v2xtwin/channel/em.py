"""Interaction coefficients: Fresnel reflection, thin-slab transmission, knife edge.

Polarization components are perpendicular (s) and parallel (p) to the plane
of incidence with ``p = s x k``.  In this basis a perfect conductor reflects
with ``diag(-1, +1)``.
"""

from __future__ import annotations

import cmath
import math

from scipy.special import fresnel


def _root(eps: complex, sin2: float) -> complex:
    # principal branch: Im <= 0 for lossy media, so exp(-j q) decays
    return cmath.sqrt(eps - sin2)


def fresnel_reflection(eps: complex, cos_i: float) -> tuple[complex, complex]:
    """(Gamma_s, Gamma_p) for a half space of relative permittivity ``eps``.

    ``cos_i`` is the cosine of the incidence angle measured from the normal.
    """
    cos_i = min(abs(cos_i), 1.0)
    root = _root(eps, 1.0 - cos_i * cos_i)
    if cos_i + root == 0:
        # eps = 1 at exact grazing: there is no interface to reflect from
        return 0j, 0j
    gs = (cos_i - root) / (cos_i + root)
    gp = (eps * cos_i - root) / (eps * cos_i + root)
    return gs, gp


def pec_reflection() -> tuple[complex, complex]:
    return -1.0 + 0j, 1.0 + 0j


def slab_transmission(eps: complex, cos_i: float, thickness: float,
                      wavelength: float) -> tuple[complex, complex]:
    """(T_s, T_p) through a single homogeneous slab, ray continuing undeviated.

    Multiple internal reflections are summed in closed form.  The phase of the
    free-space segment the slab replaces is removed, since the path length
    already accounts for it.
    """
    cos_i = min(abs(cos_i), 1.0)
    sin2 = 1.0 - cos_i * cos_i
    q = 2.0 * math.pi * thickness / wavelength * _root(eps, sin2)
    q0 = 2.0 * math.pi * thickness / wavelength * cos_i
    decay = cmath.exp(-2j * q)
    out = []
    for g in fresnel_reflection(eps, cos_i):
        out.append((1.0 - g * g) * cmath.exp(-1j * (q - q0)) / (1.0 - g * g * decay))
    return out[0], out[1]


def knife_edge_coefficient(nu: float) -> complex:
    """Complex field ratio behind a single knife edge at Fresnel parameter ``nu``.

    Equals 0.5 at grazing (nu = 0), tends to 1 for nu -> -inf and to 0 deep in
    the shadow.
    """
    s, c = fresnel(nu)
    return (1 + 1j) / 2 * ((0.5 - c) - 1j * (0.5 - s))


def knife_edge_loss_db(nu: float) -> float:
    return -20.0 * math.log10(abs(knife_edge_coefficient(nu)))
