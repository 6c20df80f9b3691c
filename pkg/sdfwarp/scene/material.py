"""Constant-albedo shading material with one directional light."""

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import torch

from sdfwarp.errors import ConfigError
from sdfwarp.scene.params import ParamLayout, Scalar, parse_vec3, read_vec3, ref_slots, vec3_to_json

RGB = Tuple[float, float, float]


@dataclass(frozen=True)
class Light:
    """Directional light; ``direction`` points from the surface towards the light."""

    direction: Tuple[float, float, float] = (0.0, -1.0, -1.0)
    intensity: RGB = (1.0, 1.0, 1.0)

    def __post_init__(self):
        length = math.sqrt(sum(c * c for c in self.direction))
        if length == 0:
            raise ConfigError("Light direction must be non-zero")
        object.__setattr__(self, "direction", tuple(float(c) / length for c in self.direction))
        if any(c < 0 for c in self.intensity):
            raise ConfigError("Light intensity must be non-negative")


@dataclass(frozen=True)
class Material:
    """Lambertian material

    Attributes:
        albedo (Tuple[Scalar, Scalar, Scalar]): RGB albedo in [0, 1], constants or θ slots
        ambient (RGB): Constant emitted term
        light (Light): Directional light
        background (RGB): Radiance of rays that miss
    """

    albedo: Tuple[Scalar, Scalar, Scalar] = (0.8, 0.8, 0.8)
    ambient: RGB = (0.05, 0.05, 0.05)
    light: Light = field(default_factory=Light)
    background: RGB = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("ambient", "background"):
            if any(c < 0 for c in getattr(self, name)):
                raise ConfigError(f"Material {name} must be non-negative")
        for c in self.albedo:
            if isinstance(c, float) and not 0.0 <= c <= 1.0:
                raise ConfigError(f"Albedo {c} outside [0, 1]")

    @classmethod
    def flat(cls, color: RGB, background: RGB = (0.0, 0.0, 0.0)) -> "Material":
        """Unlit material: hits return ``color`` regardless of geometry."""
        return cls(albedo=(0.0, 0.0, 0.0), ambient=tuple(color), background=tuple(background))

    @property
    def is_flat(self) -> bool:
        return all(isinstance(c, float) and c == 0.0 for c in self.albedo)

    def albedo_tensor(self, theta: torch.Tensor) -> torch.Tensor:
        return read_vec3(theta, self.albedo)

    def slots(self):
        return ref_slots(self.albedo)

    def to_dict(self, layout: ParamLayout) -> Dict:
        return {
            "albedo": vec3_to_json(layout, self.albedo),
            "ambient": list(self.ambient),
            "background": list(self.background),
            "light": {"direction": list(self.light.direction), "intensity": list(self.light.intensity)},
        }

    @classmethod
    def from_dict(cls, data: Dict, layout: ParamLayout) -> "Material":
        known = {"albedo", "ambient", "background", "light"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"material: unknown keys {sorted(unknown)}")
        kwargs = {}
        if "albedo" in data:
            kwargs["albedo"] = parse_vec3(layout, data["albedo"], "material.albedo")
        for name in ("ambient", "background"):
            if name in data:
                kwargs[name] = _rgb(data[name], f"material.{name}")
        if "light" in data:
            light = data["light"]
            unknown = set(light) - {"direction", "intensity"}
            if unknown:
                raise ConfigError(f"material.light: unknown keys {sorted(unknown)}")
            kwargs["light"] = Light(
                direction=_rgb(light.get("direction", Light.direction), "material.light.direction"),
                intensity=_rgb(light.get("intensity", Light.intensity), "material.light.intensity"),
            )
        return cls(**kwargs)


def _rgb(value, where: str) -> RGB:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(f"{where}: expected 3 numbers, got {value!r}")
    try:
        return tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected 3 numbers, got {value!r}") from None
