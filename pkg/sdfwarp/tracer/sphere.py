"""Sphere tracing with full trajectory records

The tracer runs in two phases. ``sphere_trace`` marches without autodiff and
records every visited point, the hit flag and the step count of each ray.
``replay_trajectory`` then recomputes the same points as a differentiable
function of the ray (and therefore of the screen coordinate) using the recorded
step counts, so no data-dependent branching happens under ``torch.func``.
The hit distance is re-attached to θ and u with one implicit-function step
(``attach_hit_distance``).
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Tuple

import torch
from loguru import logger

from sdfwarp.diff.adjoint import AdjointBuffer
from sdfwarp.errors import ConfigError, GrazingHit, InsideStart, NumericalError
from sdfwarp.scene.params import DTYPE, as_tensor
from sdfwarp.scene.scene import expr_of, sdf_and_spatial_grad
from sdfwarp.tracer.ray import Ray


class Termination(IntEnum):
    CONVERGED = 0
    ESCAPED = 1
    MAX_STEPS = 2


@dataclass
class TracerOptions:
    """Sphere tracer settings

    Attributes:
        tau_hit (float): A point with f ≤ tau_hit is a hit
        t_far (Optional[float]): Escape distance; None means 2·bounding radius + |origin|
        max_steps (Optional[int]): None means 128, or 256 for scenes with an MLP
        step_scale (Optional[float]): None means 1.0, or 0.9 for scenes with an MLP
        graze_eps (float): |∂x f·d| at or below this marks a grazing hit
    """

    tau_hit: float = 1e-5
    t_far: Optional[float] = None
    max_steps: Optional[int] = None
    step_scale: Optional[float] = None
    graze_eps: float = 1e-4

    def __post_init__(self):
        if self.tau_hit <= 0:
            raise ConfigError("tau_hit must be positive")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be at least 1")
        if self.step_scale is not None and not 0 < self.step_scale <= 1:
            raise ConfigError("step_scale must lie in (0, 1]")
        if self.t_far is not None and self.t_far <= 0:
            raise ConfigError("t_far must be positive")

    def resolved(self, scene) -> "TracerOptions":
        mlp = getattr(scene, "has_mlp", False)
        return TracerOptions(
            tau_hit=self.tau_hit,
            t_far=self.t_far,
            max_steps=self.max_steps or (256 if mlp else 128),
            step_scale=self.step_scale or (0.9 if mlp else 1.0),
            graze_eps=self.graze_eps,
        )


@dataclass
class Trajectory:
    """Recorded sphere-tracer march for a batch of B rays

    Point arrays are padded to M columns by repeating each ray's last point.

    Attributes:
        ray (Ray): Flattened rays, shape (B, 3)
        t (torch.Tensor): (B, M) distances along the ray
        f (torch.Tensor): (B, M) SDF values at the recorded points
        count (torch.Tensor): (B,) number of valid points per ray
        hit (torch.Tensor): (B,) whether the ray converged
        t_star (torch.Tensor): (B,) hit distance, NaN for non-hits
        termination (torch.Tensor): (B,) Termination codes
        step_scale (float): Step multiplier used for the march
    """

    ray: Ray
    t: torch.Tensor
    f: torch.Tensor
    count: torch.Tensor
    hit: torch.Tensor
    t_star: torch.Tensor
    termination: torch.Tensor
    step_scale: float = 1.0

    def __len__(self) -> int:
        return self.t.shape[0]

    @property
    def width(self) -> int:
        return self.t.shape[1]

    @property
    def valid(self) -> torch.Tensor:
        """(B, M) mask of recorded (non-padding) points."""
        return torch.arange(self.width)[None, :] < self.count[:, None]

    @property
    def points(self) -> torch.Tensor:
        """(B, M, 3) recorded positions."""
        return self.ray.origin[:, None, :] + self.t[..., None] * self.ray.direction[:, None, :]

    def times(self, index: int = 0) -> torch.Tensor:
        return self.t[index, : int(self.count[index])]

    def values(self, index: int = 0) -> torch.Tensor:
        return self.f[index, : int(self.count[index])]

    def record(self, index: int = 0) -> List[Tuple[float, Tuple[float, float, float], float]]:
        """[(t_i, x_i, f_i)] of one ray."""
        xs = self.points[index]
        return [
            (float(self.t[index, i]), tuple(float(c) for c in xs[i]), float(self.f[index, i]))
            for i in range(int(self.count[index]))
        ]

    def select(self, mask: torch.Tensor) -> "Trajectory":
        u = None if self.ray.u is None else self.ray.u[mask]
        return Trajectory(
            ray=Ray(self.ray.origin[mask], self.ray.direction[mask], u),
            t=self.t[mask],
            f=self.f[mask],
            count=self.count[mask],
            hit=self.hit[mask],
            t_star=self.t_star[mask],
            termination=self.termination[mask],
            step_scale=self.step_scale,
        )

    def summary(self) -> dict:
        codes = self.termination
        return {
            "rays": len(self),
            "hits": int((codes == Termination.CONVERGED).sum()),
            "escaped": int((codes == Termination.ESCAPED).sum()),
            "max_steps": int((codes == Termination.MAX_STEPS).sum()),
            "mean_steps": float(self.count.double().mean()) if len(self) else 0.0,
        }


def sphere_trace(scene, theta, ray: Ray, opts: Optional[TracerOptions] = None, quiet: bool = True) -> Trajectory:
    """March a batch of rays until hit, escape or the step limit

    Args:
        scene: SdfScene or SdfExpr
        theta: Parameter vector
        ray (Ray): One ray or a batch of rays
        opts (Optional[TracerOptions]): Tracer settings, defaults resolved from the scene
        quiet (bool): Suppress the max-step diagnostic line

    Returns:
        Trajectory: Record of every visited point

    Raises:
        InsideStart: If any ray starts with f(origin) ≤ 0
        NumericalError: If the SDF returns a non-finite value
    """
    opts = (opts or TracerOptions()).resolved(scene)
    expr = expr_of(scene)
    th = as_tensor(theta).detach()
    flat = ray.flat()
    origin, direction = flat.origin.detach(), flat.direction.detach()
    batch = origin.shape[0]
    if opts.t_far is not None:
        t_far = torch.full((batch,), float(opts.t_far), dtype=DTYPE)
    else:
        radius = getattr(scene, "bounding_radius", 1.5)
        t_far = 2.0 * radius + torch.linalg.norm(origin, dim=-1)

    t = torch.zeros(batch, dtype=DTYPE)
    f_prev = torch.zeros(batch, dtype=DTYPE)
    active = torch.ones(batch, dtype=torch.bool)
    hit = torch.zeros(batch, dtype=torch.bool)
    escaped = torch.zeros(batch, dtype=torch.bool)
    count = torch.zeros(batch, dtype=torch.long)
    t_star = torch.full((batch,), float("nan"), dtype=DTYPE)
    t_cols, f_cols = [], []

    with torch.no_grad():
        for step in range(opts.max_steps):
            f = f_prev.clone()
            idx = active.nonzero(as_tuple=True)[0]
            f_active = expr.evaluate(origin[idx] + t[idx, None] * direction[idx], th)
            if not torch.isfinite(f_active).all():
                raise NumericalError("SDF returned a non-finite value during sphere tracing")
            f[idx] = f_active
            if step == 0 and (f <= 0).any():
                raise InsideStart(f"{int((f <= 0).sum())} ray(s) start inside the geometry (f(origin) ≤ 0)")
            t_cols.append(t.clone())
            f_cols.append(f.clone())
            count += active.long()

            converged = active & (f <= opts.tau_hit)
            hit |= converged
            t_star[converged] = t[converged]
            active &= ~converged

            t_next = t + opts.step_scale * f
            leaving = active & (t_next > t_far)
            escaped |= leaving
            active &= ~leaving
            t = torch.where(active, t_next, t)
            f_prev = f
            if not active.any():
                break

    termination = torch.full((batch,), int(Termination.MAX_STEPS), dtype=torch.long)
    termination[escaped] = int(Termination.ESCAPED)
    termination[hit] = int(Termination.CONVERGED)
    stalled = int(active.sum())
    if stalled and not quiet:
        logger.warning(f"{stalled} of {batch} rays stopped at max_steps={opts.max_steps}")

    return Trajectory(
        ray=flat,
        t=torch.stack(t_cols, dim=1),
        f=torch.stack(f_cols, dim=1),
        count=count,
        hit=hit,
        t_star=t_star,
        termination=termination,
        step_scale=opts.step_scale,
    )


def replay_trajectory(expr, theta: torch.Tensor, origin: torch.Tensor, direction: torch.Tensor, traj: Trajectory):
    """Differentiable re-evaluation of a recorded march with fixed step counts

    ``origin``/``direction`` may carry screen tangents and ``theta`` may carry
    θ-derivatives; the step counts come from ``traj``. Returns (t, x, f) with the
    same (B, M) padding as the record.
    """
    steps = []
    f_vals = []
    t = torch.zeros(origin.shape[:-1], dtype=DTYPE)
    for i in range(traj.width):
        f = expr.evaluate(origin + t[..., None] * direction, theta)
        steps.append(t)
        f_vals.append(f)
        advance = (i + 1) < traj.count
        t = torch.where(advance, t + traj.step_scale * f, t)
    t_all = torch.stack(steps, dim=-1)
    x_all = origin[..., None, :] + t_all[..., None] * direction[..., None, :]
    return t_all, x_all, torch.stack(f_vals, dim=-1)


def attach_hit_distance(expr, theta, origin, direction, t0, f0, gd0) -> torch.Tensor:
    """One implicit-function step re-attaching the hit distance to θ and u.

    ``t0``, ``f0`` and ``gd0`` = ∂x f·d are plain constants from the no-grad
    trace, so the value equals ``t0`` while the derivatives are
    ∂t = −∂f / (∂x f·d).
    """
    f = expr.evaluate(origin + t0[..., None] * direction, theta)
    return t0 - (f - f0) / gd0


def hit_constants(expr, theta: torch.Tensor, traj: Trajectory, graze_eps: float):
    """(t0, f0, gd0, grazing mask) at the hit points of a trajectory batch, without autodiff."""
    t0 = torch.where(traj.hit, traj.t_star, torch.zeros_like(traj.t_star))
    x0 = traj.ray.origin + t0[:, None] * traj.ray.direction
    f0, g0 = sdf_and_spatial_grad(expr, x0.detach(), theta.detach())
    gd0 = (g0 * traj.ray.direction).sum(-1).detach()
    grazing = traj.hit & (gd0.abs() <= graze_eps)
    safe_gd = torch.where(grazing | ~traj.hit, -torch.ones_like(gd0), gd0)
    return t0.detach(), f0.detach(), safe_gd, grazing


def intersection_t_derivative(
    scene, theta, x_star, d, seed: float = 1.0, out: Optional[AdjointBuffer] = None, graze_eps: float = 1e-4
) -> Tuple[float, torch.Tensor]:
    """θ-sensitivity of the hit distance, ∂θ t* = −∂θ f / (∂x f·d)

    Returns:
        Tuple[float, torch.Tensor]: The chain factor −1/(∂x f·d) and ``seed``·∂θ t*;
        the latter is also added to ``out`` when given.

    Raises:
        GrazingHit: If |∂x f·d| ≤ graze_eps
    """
    expr = expr_of(scene)
    th = as_tensor(theta)
    x = torch.as_tensor(x_star, dtype=DTYPE)
    d = torch.as_tensor(d, dtype=DTYPE)
    _, g = sdf_and_spatial_grad(expr, x, th)
    gd = float((g * d).sum())
    if abs(gd) <= graze_eps:
        raise GrazingHit(f"|∂x f·d| = {abs(gd):.3e} at or below {graze_eps:g}")
    factor = -1.0 / gd
    grad = torch.func.grad(lambda p: expr.evaluate(x, p).sum())(th) * (factor * seed)
    if out is not None:
        out.add(grad)
    return factor, grad
