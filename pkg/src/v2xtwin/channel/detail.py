"""Detail Index (DI) presets: ray budget, interaction depth and mechanisms."""

from __future__ import annotations

from dataclasses import dataclass, replace

# Rays actually launched per source are min(nominal, cap); a nominal 1e10 is
# only reported, never traced.
DEFAULT_RAY_CAP = 1_000_000


class DetailIndexError(ValueError):
    pass


@dataclass(frozen=True)
class DetailIndexConfig:
    level: int
    max_interactions: int
    rays_nominal: int
    enable_los: bool = True
    enable_specular: bool = False
    enable_diffuse: bool = False
    enable_refraction: bool = False
    enable_diffraction: bool = False
    ray_cap: int = DEFAULT_RAY_CAP
    # a transmitted branch may cross at most this many slabs
    max_transmissions: int = 2

    def __post_init__(self):
        if self.max_interactions < 0 or self.rays_nominal < 1 or self.ray_cap < 1:
            raise DetailIndexError(f"invalid DI configuration {self}")

    @property
    def rays_per_source(self) -> int:
        return int(min(self.rays_nominal, self.ray_cap))

    @property
    def mechanisms(self) -> tuple[str, ...]:
        names = ("los", "specular", "diffuse", "refraction", "diffraction")
        flags = (self.enable_los, self.enable_specular, self.enable_diffuse,
                 self.enable_refraction, self.enable_diffraction)
        return tuple(n for n, f in zip(names, flags) if f)

    def with_ray_cap(self, cap: int) -> "DetailIndexConfig":
        return replace(self, ray_cap=int(cap))

    def with_mechanisms(self, **flags) -> "DetailIndexConfig":
        return replace(self, **flags)


PRESETS: dict[int, DetailIndexConfig] = {
    1: DetailIndexConfig(1, 3, 10**3),
    2: DetailIndexConfig(2, 3, 10**3, enable_specular=True),
    3: DetailIndexConfig(3, 5, 10**6, enable_specular=True, enable_diffuse=True),
    4: DetailIndexConfig(4, 8, 10**10, enable_specular=True, enable_diffuse=True,
                         enable_refraction=True),
    5: DetailIndexConfig(5, 8, 10**10, enable_specular=True, enable_diffuse=True,
                         enable_refraction=True, enable_diffraction=True),
}


def detail_index(level: int, ray_cap: int | None = None) -> DetailIndexConfig:
    """Preset for DI ``level`` (1..5), optionally with a different runtime ray cap."""
    try:
        cfg = PRESETS[int(level)]
    except (KeyError, ValueError):
        raise DetailIndexError(f"DI level must be 1..5, got {level!r}") from None
    return cfg if ray_cap is None else cfg.with_ray_cap(ray_cap)
