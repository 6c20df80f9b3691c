"""Composable signed distance expressions

Nodes are immutable and hold only parameter references (``Slot``) or constants;
``evaluate(x, theta)`` is a pure torch function of both arguments, so it can be
traced by ``torch.func`` transforms over either one.

Conventions:
    - f < 0 inside, f > 0 outside
    - min/max nodes pick the first child on exact ties
    - the torus axis is the local z axis
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import torch

from sdfwarp.errors import ConfigError
from sdfwarp.scene.params import (
    DTYPE,
    ParamLayout,
    Scalar,
    read,
    read_vec3,
    ref_slots,
    ref_to_json,
    vec3_to_json,
)

Vec3 = Tuple[Scalar, Scalar, Scalar]


def safe_norm(v: torch.Tensor) -> torch.Tensor:
    """Euclidean norm over the last axis with a zero (not NaN) derivative at 0."""
    n2 = (v * v).sum(-1)
    positive = n2 > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, n2, torch.ones_like(n2))), torch.zeros_like(n2))


def euler_matrix(angles: torch.Tensor) -> torch.Tensor:
    """Rotation R = Rz·Ry·Rx for XYZ Euler angles in radians."""
    cx, cy, cz = torch.cos(angles)
    sx, sy, sz = torch.sin(angles)
    zero = torch.zeros((), dtype=angles.dtype)
    one = torch.ones((), dtype=angles.dtype)
    rx = torch.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx]).reshape(3, 3)
    ry = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy]).reshape(3, 3)
    rz = torch.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one]).reshape(3, 3)
    return rz @ ry @ rx


class SdfExpr:
    """Base class of every SDF node."""

    kind = "expr"

    def children(self) -> Sequence["SdfExpr"]:
        return ()

    def evaluate(self, x: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def own_slots(self) -> List[int]:
        return []

    def slots(self) -> List[int]:
        found = list(self.own_slots())
        for child in self.children():
            found.extend(child.slots())
        return sorted(set(found))

    def ties(self, x: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
        """Mask of points where a min/max node sits exactly on a branch switch."""
        mask = torch.zeros(x.shape[:-1], dtype=torch.bool)
        for child in self.children():
            mask = mask | child.ties(x, theta)
        return mask

    def is_exact(self) -> bool:
        """Whether the node yields an exact (not only bounding) distance."""
        return False

    def to_dict(self, layout: ParamLayout) -> Dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Sphere(SdfExpr):
    center: Vec3
    radius: Scalar

    kind = "sphere"

    def evaluate(self, x, theta):
        return safe_norm(x - read_vec3(theta, self.center)) - read(theta, self.radius)

    def own_slots(self):
        return ref_slots([*self.center, self.radius])

    def is_exact(self):
        return True

    def to_dict(self, layout):
        return {
            "type": self.kind,
            "center": vec3_to_json(layout, self.center),
            "radius": ref_to_json(layout, self.radius),
        }


@dataclass(frozen=True)
class Box(SdfExpr):
    center: Vec3
    half_size: Vec3

    kind = "box"

    def evaluate(self, x, theta):
        q = torch.abs(x - read_vec3(theta, self.center)) - read_vec3(theta, self.half_size)
        outside = safe_norm(torch.clamp_min(q, 0.0))
        inside = torch.clamp_max(q.max(dim=-1).values, 0.0)
        return outside + inside

    def own_slots(self):
        return ref_slots([*self.center, *self.half_size])

    def is_exact(self):
        return True

    def to_dict(self, layout):
        return {
            "type": self.kind,
            "center": vec3_to_json(layout, self.center),
            "half_size": vec3_to_json(layout, self.half_size),
        }


@dataclass(frozen=True)
class Torus(SdfExpr):
    center: Vec3
    major_radius: Scalar
    minor_radius: Scalar

    kind = "torus"

    def evaluate(self, x, theta):
        p = x - read_vec3(theta, self.center)
        ring = safe_norm(p[..., :2]) - read(theta, self.major_radius)
        q = torch.stack([ring, p[..., 2]], dim=-1)
        return safe_norm(q) - read(theta, self.minor_radius)

    def own_slots(self):
        return ref_slots([*self.center, self.major_radius, self.minor_radius])

    def is_exact(self):
        return True

    def to_dict(self, layout):
        return {
            "type": self.kind,
            "center": vec3_to_json(layout, self.center),
            "major_radius": ref_to_json(layout, self.major_radius),
            "minor_radius": ref_to_json(layout, self.minor_radius),
        }


@dataclass(frozen=True)
class Plane(SdfExpr):
    """Half-space n·x ≤ offset; the normal is a constant."""

    normal: Tuple[float, float, float]
    offset: Scalar

    kind = "plane"

    def __post_init__(self):
        length = sum(c * c for c in self.normal) ** 0.5
        if length == 0:
            raise ConfigError("Plane normal must be non-zero")
        object.__setattr__(self, "normal", tuple(float(c) / length for c in self.normal))

    def evaluate(self, x, theta):
        n = torch.tensor(self.normal, dtype=DTYPE)
        return (x * n).sum(-1) - read(theta, self.offset)

    def own_slots(self):
        return ref_slots([self.offset])

    def is_exact(self):
        return True

    def to_dict(self, layout):
        return {"type": self.kind, "normal": list(self.normal), "offset": ref_to_json(layout, self.offset)}


def _fold(values: List[torch.Tensor], keep_first) -> Tuple[torch.Tensor, torch.Tensor]:
    acc = values[0]
    tie = torch.zeros(acc.shape, dtype=torch.bool)
    for value in values[1:]:
        tie = tie | (acc == value)
        acc = torch.where(keep_first(acc, value), acc, value)
    return acc, tie


@dataclass(frozen=True)
class Union(SdfExpr):
    items: Tuple[SdfExpr, ...]

    kind = "union"

    def __post_init__(self):
        if len(self.items) < 1:
            raise ConfigError("union needs at least one child")

    def children(self):
        return self.items

    def evaluate(self, x, theta):
        value, _ = _fold([c.evaluate(x, theta) for c in self.items], lambda a, b: a <= b)
        return value

    def ties(self, x, theta):
        _, tie = _fold([c.evaluate(x, theta) for c in self.items], lambda a, b: a <= b)
        return tie | super().ties(x, theta)

    def to_dict(self, layout):
        return {"type": self.kind, "children": [c.to_dict(layout) for c in self.items]}


@dataclass(frozen=True)
class Intersection(SdfExpr):
    items: Tuple[SdfExpr, ...]

    kind = "intersection"

    def __post_init__(self):
        if len(self.items) < 1:
            raise ConfigError("intersection needs at least one child")

    def children(self):
        return self.items

    def evaluate(self, x, theta):
        value, _ = _fold([c.evaluate(x, theta) for c in self.items], lambda a, b: a >= b)
        return value

    def ties(self, x, theta):
        _, tie = _fold([c.evaluate(x, theta) for c in self.items], lambda a, b: a >= b)
        return tie | super().ties(x, theta)

    def to_dict(self, layout):
        return {"type": self.kind, "children": [c.to_dict(layout) for c in self.items]}


@dataclass(frozen=True)
class SmoothUnion(SdfExpr):
    """Polynomial smooth minimum with blend width k."""

    first: SdfExpr
    second: SdfExpr
    k: Scalar

    kind = "smooth_union"

    def children(self):
        return (self.first, self.second)

    def evaluate(self, x, theta):
        a = self.first.evaluate(x, theta)
        b = self.second.evaluate(x, theta)
        k = read(theta, self.k)
        h = torch.clamp(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
        return b * (1.0 - h) + a * h - k * h * (1.0 - h)

    def own_slots(self):
        return ref_slots([self.k])

    def to_dict(self, layout):
        return {
            "type": self.kind,
            "children": [self.first.to_dict(layout), self.second.to_dict(layout)],
            "k": ref_to_json(layout, self.k),
        }


@dataclass(frozen=True)
class Complement(SdfExpr):
    child: SdfExpr

    kind = "complement"

    def children(self):
        return (self.child,)

    def evaluate(self, x, theta):
        return -self.child.evaluate(x, theta)

    def is_exact(self):
        return self.child.is_exact()

    def to_dict(self, layout):
        return {"type": self.kind, "child": self.child.to_dict(layout)}


@dataclass(frozen=True)
class Transform(SdfExpr):
    """Similarity transform: f(x) = s·child(Rᵀ(x − t)/s)."""

    child: SdfExpr
    translation: Vec3 = (0.0, 0.0, 0.0)
    rotation: Vec3 = (0.0, 0.0, 0.0)
    scale: Scalar = 1.0

    kind = "transform"

    def children(self):
        return (self.child,)

    def _local(self, x, theta):
        t = read_vec3(theta, self.translation)
        rot = euler_matrix(read_vec3(theta, self.rotation))
        s = read(theta, self.scale)
        return ((x - t) @ rot) / s, s

    def evaluate(self, x, theta):
        local, s = self._local(x, theta)
        return s * self.child.evaluate(local, theta)

    def ties(self, x, theta):
        local, _ = self._local(x, theta)
        return self.child.ties(local, theta)

    def own_slots(self):
        return ref_slots([*self.translation, *self.rotation, self.scale])

    def is_exact(self):
        return self.child.is_exact()

    def to_dict(self, layout):
        return {
            "type": self.kind,
            "child": self.child.to_dict(layout),
            "translation": vec3_to_json(layout, self.translation),
            "rotation": vec3_to_json(layout, self.rotation),
            "scale": ref_to_json(layout, self.scale),
        }
