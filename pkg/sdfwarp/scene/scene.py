"""Scene container and the evaluation contracts used by the renderer

Example:
    >>> from sdfwarp.scene import sphere_scene, eval_sdf
    >>> scene = sphere_scene(radius=1.0)
    >>> float(eval_sdf(scene, [0.0, 0.0, -3.0], scene.theta))
    2.0
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import torch

from sdfwarp.diff.adjoint import AdjointBuffer
from sdfwarp.errors import ConfigError, DegenerateNormal, NumericalError
from sdfwarp.scene.material import Material
from sdfwarp.scene.params import DTYPE, ParamLayout, ParamVector, as_tensor
from sdfwarp.scene.sdf import SdfExpr, Sphere, Torus

NORMAL_EPS = 1e-8

ThetaLike = Union[ParamVector, torch.Tensor]


@dataclass
class SdfScene:
    """Geometry, material and parameters of a renderable scene

    Attributes:
        sdf (SdfExpr): Root of the SDF expression tree
        theta (ParamVector): Current parameter values
        material (Material): Shading material
        bounding_radius (float): Radius of a sphere around the origin containing all geometry
        camera (Optional[object]): Default camera loaded with the scene file
    """

    sdf: SdfExpr
    theta: ParamVector
    material: Material = field(default_factory=Material)
    bounding_radius: float = 1.5
    camera: Optional[object] = None

    def __post_init__(self):
        if self.bounding_radius <= 0:
            raise ConfigError("bounding_radius must be positive")
        used = self.sdf.slots() + self.material.slots()
        if used and max(used) >= len(self.theta):
            raise ConfigError(f"SDF references slot {max(used)} but θ has {len(self.theta)} entries")

    @property
    def layout(self) -> ParamLayout:
        return self.theta.layout

    @property
    def has_mlp(self) -> bool:
        stack = [self.sdf]
        while stack:
            node = stack.pop()
            if node.kind == "mlp":
                return True
            stack.extend(node.children())
        return False

    def with_theta(self, theta: ThetaLike) -> "SdfScene":
        values = as_tensor(theta)
        return SdfScene(
            sdf=self.sdf,
            theta=self.theta.with_values(values),
            material=self.material,
            bounding_radius=self.bounding_radius,
            camera=self.camera,
        )


def expr_of(scene) -> SdfExpr:
    return scene.sdf if isinstance(scene, SdfScene) else scene


def as_points(x) -> torch.Tensor:
    points = torch.as_tensor(x, dtype=DTYPE)
    if points.shape[-1] != 3:
        raise ConfigError(f"Points must have a trailing axis of size 3, got shape {tuple(points.shape)}")
    if not torch.isfinite(points).all():
        raise NumericalError("SDF query point is not finite")
    return points


def eval_sdf(scene, x, theta: ThetaLike) -> torch.Tensor:
    """Signed distance at one point (shape (3,)) or a batch (shape (..., 3))."""
    value = expr_of(scene).evaluate(as_points(x), as_tensor(theta))
    if not torch.isfinite(value).all():
        raise NumericalError("SDF evaluation produced a non-finite value")
    return value


def sdf_and_spatial_grad(expr: SdfExpr, x: torch.Tensor, theta: torch.Tensor):
    """(f, ∂x f) for a batch of points; traceable by outer torch.func transforms."""

    def summed(p):
        value = expr.evaluate(p, theta)
        return value.sum(), value

    grad, value = torch.func.grad(summed, has_aux=True)(x)
    return value, grad


def eval_sdf_spatial_grad(scene, x, theta: ThetaLike) -> torch.Tensor:
    """∂x f at one point or a batch; raises DegenerateNormal on medial-axis points."""
    points = as_points(x)
    value, grad = sdf_and_spatial_grad(expr_of(scene), points, as_tensor(theta))
    if not (torch.isfinite(value).all() and torch.isfinite(grad).all()):
        raise NumericalError("SDF gradient is not finite")
    norms = torch.linalg.norm(grad, dim=-1)
    if (norms < NORMAL_EPS).any():
        raise DegenerateNormal(f"|∂x f| = {float(norms.min()):.3e} below {NORMAL_EPS:g}")
    return grad


def accumulate_param_adjoint(
    scene, x, theta: ThetaLike, seed: Union[float, torch.Tensor], out: Union[AdjointBuffer, torch.Tensor]
) -> None:
    """out += seed · ∂θ f(x; θ); with a batch of points, seeds broadcast per point."""
    points = as_points(x)
    expr = expr_of(scene)
    seeds = torch.as_tensor(seed, dtype=DTYPE)

    def weighted(th):
        return (seeds * expr.evaluate(points, th)).sum()

    grad = torch.func.grad(weighted)(as_tensor(theta))
    if not torch.isfinite(grad).all():
        raise NumericalError("Parameter adjoint is not finite")
    if isinstance(out, AdjointBuffer):
        out.add(grad)
    else:
        if out.shape != grad.shape:
            raise ConfigError(f"Adjoint buffer has shape {tuple(out.shape)}, expected {tuple(grad.shape)}")
        out += grad


def sphere_scene(
    radius: float = 1.0,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    material: Optional[Material] = None,
    bounding_radius: Optional[float] = None,
) -> SdfScene:
    """A single sphere whose center and radius are the parameters ``center`` and ``radius``."""
    layout = ParamLayout()
    c = layout.allocate("center", (3,))
    r = layout.allocate("radius")
    theta = ParamVector(torch.tensor([*center, radius], dtype=DTYPE), layout)
    return SdfScene(
        sdf=Sphere(center=tuple(c.slots()), radius=r.slots()[0]),
        theta=theta,
        material=material or Material(),
        bounding_radius=bounding_radius or 1.5 * radius + max(abs(v) for v in center),
    )


def torus_scene(
    major_radius: float = 0.8,
    minor_radius: float = 0.3,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    material: Optional[Material] = None,
) -> SdfScene:
    """A z-axis torus with parameters ``center``, ``major_radius`` (outer radius) and ``minor_radius``."""
    layout = ParamLayout()
    c = layout.allocate("center", (3,))
    big = layout.allocate("major_radius")
    small = layout.allocate("minor_radius")
    theta = ParamVector(torch.tensor([*center, major_radius, minor_radius], dtype=DTYPE), layout)
    return SdfScene(
        sdf=Torus(center=tuple(c.slots()), major_radius=big.slots()[0], minor_radius=small.slots()[0]),
        theta=theta,
        material=material or Material(),
        bounding_radius=1.25 * (major_radius + minor_radius) + max(abs(v) for v in center),
    )
