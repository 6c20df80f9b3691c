"""Cameras and the screen parameterization u = (u₁, u₂)

u₁ runs along the camera right vector R, u₂ along the camera down vector D,
both centered on the optical axis. Pixel (r, c) covers
u₁ ∈ [−w/2 + c·Δ₁, −w/2 + (c+1)·Δ₁] and u₂ ∈ [−h/2 + r·Δ₂, −h/2 + (r+1)·Δ₂],
where (w, h) is the film extent. For a pinhole camera the extent is measured on
the image plane at unit distance from the eye.
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch

from sdfwarp.errors import ConfigError
from sdfwarp.tracer.ray import Ray

DTYPE = torch.float64

KINDS = ("orthographic", "pinhole")
CAMERA_KEYS = {"kind", "eye", "target", "up", "width", "height", "extent", "fov"}


def _normalize(v: torch.Tensor) -> torch.Tensor:
    return v / torch.linalg.norm(v, dim=-1, keepdim=True)


@dataclass(frozen=True)
class Camera:
    """Orthographic or pinhole camera

    Attributes:
        kind (str): "orthographic" or "pinhole"
        eye (Tuple[float, float, float]): Camera position (image-plane center for orthographic)
        target (Tuple[float, float, float]): Look-at point
        up (Tuple[float, float, float]): Approximate up vector; image rows grow along −up
        width (int): Film width in pixels
        height (int): Film height in pixels
        extent (Optional[Tuple[float, float]]): Film size in screen units (orthographic)
        fov (Optional[float]): Vertical field of view in degrees (pinhole)
    """

    kind: str = "orthographic"
    eye: Tuple[float, float, float] = (0.0, 0.0, -3.0)
    target: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: Tuple[float, float, float] = (0.0, -1.0, 0.0)
    width: int = 64
    height: int = 64
    extent: Optional[Tuple[float, float]] = None
    fov: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"Camera kind must be one of {KINDS}, got '{self.kind}'")
        if self.width < 1 or self.height < 1:
            raise ConfigError("Film must be at least 1×1 pixels")
        forward = [t - e for t, e in zip(self.target, self.eye)]
        if math.sqrt(sum(c * c for c in forward)) == 0:
            raise ConfigError("Camera eye and target coincide")
        cross = [
            forward[1] * self.up[2] - forward[2] * self.up[1],
            forward[2] * self.up[0] - forward[0] * self.up[2],
            forward[0] * self.up[1] - forward[1] * self.up[0],
        ]
        if math.sqrt(sum(c * c for c in cross)) < 1e-12:
            raise ConfigError("Camera up vector is parallel to the view direction")
        if self.kind == "orthographic":
            if self.extent is None:
                object.__setattr__(self, "extent", (3.0, 3.0 * self.height / self.width))
        else:
            fov = 40.0 if self.fov is None else float(self.fov)
            if not 0 < fov < 180:
                raise ConfigError(f"Pinhole fov must lie in (0, 180) degrees, got {fov}")
            object.__setattr__(self, "fov", fov)
            if self.extent is None:
                sy = 2.0 * math.tan(math.radians(fov) / 2.0)
                object.__setattr__(self, "extent", (sy * self.width / self.height, sy))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        if min(self.extent) <= 0:
            raise ConfigError("Film extent must be positive")

    # frame

    def frame(self) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """(R, D, F): right, down and forward unit vectors."""
        eye = torch.tensor(self.eye, dtype=DTYPE)
        forward = _normalize(torch.tensor(self.target, dtype=DTYPE) - eye)
        right = _normalize(torch.linalg.cross(forward, torch.tensor(self.up, dtype=DTYPE)))
        down = torch.linalg.cross(forward, right)
        return right, down, forward

    @property
    def distance(self) -> float:
        return math.dist(self.eye, self.target)

    # pixels

    @property
    def pixel_size(self) -> Tuple[float, float]:
        return self.extent[0] / self.width, self.extent[1] / self.height

    @property
    def pixel_area(self) -> float:
        dx, dy = self.pixel_size
        return dx * dy

    def pixel_bounds(self, row: int, col: int) -> Tuple[float, float, float, float]:
        """(u₁_lo, u₁_hi, u₂_lo, u₂_hi) of a pixel."""
        dx, dy = self.pixel_size
        w, h = self.extent[0] / 2.0, self.extent[1] / 2.0
        return -w + col * dx, -w + (col + 1) * dx, -h + row * dy, -h + (row + 1) * dy

    def pixel_center(self, row: int, col: int) -> Tuple[float, float]:
        lo1, hi1, lo2, hi2 = self.pixel_bounds(row, col)
        return 0.5 * (lo1 + hi1), 0.5 * (lo2 + hi2)

    def pixel_of(self, u) -> Tuple[int, int]:
        dx, dy = self.pixel_size
        col = math.floor((float(u[0]) + self.extent[0] / 2.0) / dx)
        row = math.floor((float(u[1]) + self.extent[1] / 2.0) / dy)
        return row, col

    # rays

    def ray_tensors(self, u: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Differentiable (origin, direction) for screen points of shape (..., 2)."""
        right, down, forward = self.frame()
        eye = torch.tensor(self.eye, dtype=DTYPE)
        offset = u[..., 0:1] * right + u[..., 1:2] * down
        if self.kind == "orthographic":
            origin = eye + offset
            direction = forward.expand(origin.shape)
            return origin, direction
        w = forward + offset
        direction = w / torch.sqrt((w * w).sum(-1, keepdim=True))
        return eye.expand(direction.shape), direction

    def screen_jacobian(self, u, t) -> torch.Tensor:
        """∂x/∂u at fixed t, shape (..., 3, 2), in closed form."""
        u = torch.as_tensor(u, dtype=DTYPE)
        t = torch.as_tensor(t, dtype=DTYPE)
        right, down, forward = self.frame()
        basis = torch.stack([right, down], dim=-1)
        if self.kind == "orthographic":
            return basis.expand(u.shape[:-1] + (3, 2)).clone()
        w = forward + u[..., 0:1] * right + u[..., 1:2] * down
        norm = torch.linalg.norm(w, dim=-1, keepdim=True)
        d = w / norm
        proj = torch.eye(3, dtype=DTYPE) - d[..., :, None] * d[..., None, :]
        return (t[..., None, None] / norm[..., None]) * (proj @ basis)

    # serialization

    def to_dict(self) -> Dict:
        data = {
            "kind": self.kind,
            "eye": list(self.eye),
            "target": list(self.target),
            "up": list(self.up),
            "width": self.width,
            "height": self.height,
            "extent": list(self.extent),
        }
        if self.kind == "pinhole":
            data["fov"] = self.fov
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "Camera":
        if not isinstance(data, dict):
            raise ConfigError("camera: expected an object")
        unknown = set(data) - CAMERA_KEYS
        if unknown:
            raise ConfigError(f"camera: unknown keys {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("eye", "target", "up"):
            if key in kwargs:
                kwargs[key] = tuple(float(v) for v in kwargs[key])
        if "extent" in kwargs and kwargs["extent"] is not None:
            kwargs["extent"] = tuple(float(v) for v in kwargs["extent"])
        return cls(**kwargs)

    def with_film(self, width: int, height: int) -> "Camera":
        """Same view at another resolution (the film extent is kept)."""
        return Camera(
            kind=self.kind,
            eye=self.eye,
            target=self.target,
            up=self.up,
            width=width,
            height=height,
            extent=self.extent,
            fov=self.fov,
        )


def generate_ray(camera: Camera, u) -> Ray:
    u = torch.as_tensor(u, dtype=DTYPE)
    origin, direction = camera.ray_tensors(u)
    return Ray(origin.clone(), direction.clone(), u)


def look_at(eye, target=(0.0, 0.0, 0.0), **kwargs) -> Camera:
    """Camera at ``eye`` looking at ``target``; picks an up vector not parallel to the view."""
    forward = [t - e for t, e in zip(target, eye)]
    up = kwargs.pop("up", (0.0, -1.0, 0.0))
    norm_f = math.sqrt(sum(c * c for c in forward))
    if abs(sum(a * b for a, b in zip(forward, up))) > 0.999 * norm_f * math.sqrt(sum(c * c for c in up)):
        up = (0.0, 0.0, 1.0)
    return Camera(eye=tuple(float(e) for e in eye), target=tuple(float(t) for t in target), up=up, **kwargs)
