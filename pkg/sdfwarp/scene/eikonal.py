"""Eikonal regularization: mean (|∂x f| − 1)² over sample points."""

from dataclasses import dataclass

import numpy as np
import torch
from loguru import logger

from sdfwarp.errors import ConfigError, NumericalError
from sdfwarp.scene.params import DTYPE, as_tensor
from sdfwarp.scene.scene import NORMAL_EPS, expr_of, as_points, sdf_and_spatial_grad


@dataclass
class EikonalResult:
    """Eikonal loss value and θ-gradient

    Attributes:
        loss (float): Mean squared deviation of |∂x f| from 1
        grad (torch.Tensor): ∂θ loss, length N
        used (int): Points that entered the mean
        skipped (int): Degenerate-normal points left out
    """

    loss: float
    grad: torch.Tensor
    used: int
    skipped: int

    def __iter__(self):
        # unpacks as (loss, grad)
        return iter((self.loss, self.grad))


def eikonal_loss(scene, theta, sample_points, quiet: bool = True) -> EikonalResult:
    points = as_points(sample_points).reshape(-1, 3)
    if points.shape[0] == 0:
        raise ConfigError("eikonal_loss needs at least one sample point")
    expr = expr_of(scene)
    th = as_tensor(theta)

    _, grad0 = sdf_and_spatial_grad(expr, points, th)
    keep = torch.linalg.norm(grad0, dim=-1) >= NORMAL_EPS
    skipped = int((~keep).sum())
    if skipped and not quiet:
        logger.warning(f"Eikonal: skipped {skipped} degenerate-normal points")
    if not keep.any():
        return EikonalResult(0.0, torch.zeros_like(th), 0, skipped)
    kept = points[keep]

    def loss_fn(t):
        _, g = sdf_and_spatial_grad(expr, kept, t)
        norms = torch.sqrt((g * g).sum(-1))
        return ((norms - 1.0) ** 2).mean()

    grad, loss = torch.func.grad_and_value(loss_fn)(th)
    if not (torch.isfinite(loss) and torch.isfinite(grad).all()):
        raise NumericalError("Eikonal loss is not finite")
    return EikonalResult(float(loss), grad, int(keep.sum()), skipped)


def sample_bounding_ball(radius: float, count: int, seed: int, iteration: int = 0) -> torch.Tensor:
    """Uniform points in the ball of the given radius (Philox stream keyed by iteration)."""
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, iteration, 2]))
    directions = rng.normal(size=(count, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(count) ** (1.0 / 3.0)
    return torch.from_numpy(directions * radii[:, None]).to(DTYPE)
