"""Differentiable Lambertian shading."""

import torch
import torch.nn.functional as F

from sdfwarp.errors import DegenerateNormal
from sdfwarp.scene.material import Material
from sdfwarp.scene.params import DTYPE

TERMINATOR_BETA = 1000.0
NORMAL_EPS = 1e-8


def shade(x: torch.Tensor, grad: torch.Tensor, d: torch.Tensor, material: Material, theta=None, strict: bool = True):
    """RGB radiance L = ambient + albedo·softplus(n̂·l)·intensity at surface points.

    ``x`` and ``d`` are accepted for interface symmetry with view-dependent
    models; the Lambertian model reads only the normal. The clamp of n̂·l is a
    softplus of width 1/1000 so the result stays differentiable at the terminator.

    Raises:
        DegenerateNormal: If ``strict`` and some |∂x f| < 1e-8
    """
    norm2 = (grad * grad).sum(-1, keepdim=True)
    if strict and bool((norm2 < NORMAL_EPS**2).any()):
        raise DegenerateNormal("Cannot shade a point with a vanishing SDF gradient")
    normal = grad / torch.sqrt(torch.clamp_min(norm2, NORMAL_EPS**2))
    light = torch.tensor(material.light.direction, dtype=DTYPE)
    cosine = F.softplus((normal * light).sum(-1), beta=TERMINATOR_BETA)
    albedo = material.albedo_tensor(torch.zeros(0, dtype=DTYPE) if theta is None else theta)
    ambient = torch.tensor(material.ambient, dtype=DTYPE)
    intensity = torch.tensor(material.light.intensity, dtype=DTYPE)
    return ambient + albedo * intensity * cosine[..., None]


def background(material: Material, shape) -> torch.Tensor:
    return torch.tensor(material.background, dtype=DTYPE).expand(*shape, 3)
