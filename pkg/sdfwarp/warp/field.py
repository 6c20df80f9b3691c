"""Warp field built from sphere-tracer quadrature

For a screen point u with recorded trajectory points x_i, the warp is

    V(u) = Σ_i ω̄_i · G(x_i) · P_i,   G(x) = −∂θf ⊗ ∂x f / |∂x f|²

where ω̄ are the normalized top-k quadrature weights and P_i the 2×3 left
pseudo-inverse of ∂x/∂u. V is never materialized for large θ. Instead
``WarpEval`` stores, per retained point, the screen 2-vector
a_i = −ω̄_i · P_i ∂x f / |∂x f|² together with ∂u x_i and ∂u a_i, so that

    Φ(θ') = Σ_i f(x_i; θ') a_i           ∂θ' Φ = V
    divΦ(θ') = ∇u · Φ                     ∂θ' divΦ = ∇u·V

are cheap functions of a probe θ' that autodiff turns into V, ∇u·V, their
directional derivatives or seeded adjoints.
"""

import dataclasses
from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from sdfwarp.diff.screen import with_screen_tangents
from sdfwarp.errors import DegenerateNormal, RankDeficient
from sdfwarp.render.camera import Camera, generate_ray
from sdfwarp.scene.params import DTYPE, as_tensor
from sdfwarp.scene.scene import expr_of, sdf_and_spatial_grad
from sdfwarp.tracer.sphere import TracerOptions, Trajectory, replay_trajectory, sphere_trace
from sdfwarp.warp.weights import (
    ALL,
    WarpConfig,
    harmonic_weight,
    normalized,
    quadrature_weights,
    silhouette_score,
    topk_weights,
)

NORMAL_EPS = 1e-8
T_MIN = 1e-9
DET_EPS = 1e-300


def pseudo_inverse(jac: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """(JᵀJ)⁻¹Jᵀ for (..., 3, 2) Jacobians via the 2×2 adjugate; also returns det(JᵀJ)."""
    jtj = jac.transpose(-1, -2) @ jac
    a, b = jtj[..., 0, 0], jtj[..., 0, 1]
    c, d = jtj[..., 1, 0], jtj[..., 1, 1]
    det = a * d - b * c
    adj = torch.stack([torch.stack([d, -b], dim=-1), torch.stack([-c, a], dim=-1)], dim=-2)
    safe = torch.where(det > DET_EPS, det, torch.ones_like(det))
    return (adj / safe[..., None, None]) @ jac.transpose(-1, -2), det


def screen_projection(camera: Camera, u, t) -> torch.Tensor:
    """2×3 map P with du = P·dx, the left pseudo-inverse of ∂x/∂u at fixed t

    Raises:
        RankDeficient: If ∂x/∂u does not have rank 2 (e.g. t ≤ 0 for a pinhole camera)
    """
    u = torch.as_tensor(u, dtype=DTYPE)
    t = torch.as_tensor(t, dtype=DTYPE)
    if camera.kind == "pinhole" and bool((t <= 0).any()):
        raise RankDeficient("Pinhole screen projection needs t > 0")
    proj, det = pseudo_inverse(camera.screen_jacobian(u, t))
    if bool((det <= DET_EPS).any()):
        raise RankDeficient("Screen Jacobian is rank deficient")
    return proj


def boundary_derivative_G(scene, theta, x) -> torch.Tensor:
    """G(x; θ) = −∂θf ⊗ ∂x f / |∂x f|², shape (..., N, 3): the surface velocity per parameter."""
    expr = expr_of(scene)
    th = as_tensor(theta)
    x = torch.as_tensor(x, dtype=DTYPE)
    _, g = sdf_and_spatial_grad(expr, x, th)
    gn2 = (g * g).sum(-1)
    if bool((gn2 < NORMAL_EPS**2).any()):
        raise DegenerateNormal("G undefined where |∂x f| < 1e-8")
    df = torch.func.jacrev(lambda p: expr.evaluate(x, p))(th)
    return -df[..., :, None] * (g / gn2[..., None])[..., None, :]


@dataclass
class WarpEval:
    """Warp of a batch of B screen points in factored form

    Attributes:
        x (torch.Tensor): Retained trajectory points, shape (B, K, 3)
        dx (torch.Tensor): ∂u x, shape (B, K, 3, 2)
        a (torch.Tensor): Screen vectors a_i, shape (B, K, 2)
        da (torch.Tensor): ∂u a, shape (B, K, 2, 2) as [..., component, axis]
        support (torch.Tensor): (B, K) trajectory indices of the retained points
        t, f, score, w, wq, wk, omega (torch.Tensor): (B, M) per-point diagnostics
        denominator (torch.Tensor): (B,) Σ w̄ before normalization
        degenerate_per_ray (Optional[torch.Tensor]): (B,) points dropped for a vanishing SDF gradient
        count (Optional[torch.Tensor]): (B,) recorded points per ray
        theta (torch.Tensor): θ the warp was built at
    """

    expr: object
    theta: torch.Tensor
    x: torch.Tensor
    dx: torch.Tensor
    a: torch.Tensor
    da: torch.Tensor
    support: torch.Tensor
    t: torch.Tensor
    f: torch.Tensor
    score: torch.Tensor
    w: torch.Tensor
    wq: torch.Tensor
    wk: torch.Tensor
    omega: torch.Tensor
    denominator: torch.Tensor
    degenerate_per_ray: Optional[torch.Tensor] = None
    count: Optional[torch.Tensor] = None

    @property
    def degenerate(self) -> int:
        return 0 if self.degenerate_per_ray is None else int(self.degenerate_per_ray.sum())

    def potential(self, theta_probe: torch.Tensor) -> torch.Tensor:
        """Φ(θ') = Σ_i f(x_i; θ') a_i, shape (B, 2)."""
        f = self.expr.evaluate(self.x, theta_probe)
        return (f[..., None] * self.a).sum(-2)

    def divergence_potential(self, theta_probe: torch.Tensor) -> torch.Tensor:
        """∇u · Φ(θ'), shape (B,)."""
        f, g = sdf_and_spatial_grad(self.expr, self.x, theta_probe)
        df_du = (g[..., :, None] * self.dx).sum(-2)  # (B, K, 2)
        div_a = self.da[..., 0, 0] + self.da[..., 1, 1]
        return (df_du[..., 0] * self.a[..., 0] + df_du[..., 1] * self.a[..., 1] + f * div_a).sum(-1)

    def V(self) -> torch.Tensor:
        """Dense warp (B, N, 2); intended for small N."""
        return torch.func.jacrev(self.potential)(self.theta).movedim(-1, 1)

    def div_V(self) -> torch.Tensor:
        """Dense ∇u·V per parameter, (B, N)."""
        return torch.func.jacrev(self.divergence_potential)(self.theta)

    def directional(self, direction: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """(V·v of shape (B, 2), (∇u·V)·v of shape (B,)) for a θ-direction v."""
        v = direction.to(DTYPE)
        _, vv = torch.func.jvp(self.potential, (self.theta,), (v,))
        _, dv = torch.func.jvp(self.divergence_potential, (self.theta,), (v,))
        return vv, dv

    @property
    def max_weight(self) -> torch.Tensor:
        return self.omega.max(dim=-1).values

    def rows(self, index) -> "WarpEval":
        """The warp of a row slice or mask of the batch."""
        per_row = ("x", "dx", "a", "da", "support", "t", "f", "score", "w", "wq", "wk", "omega", "denominator")
        sliced = {name: getattr(self, name)[index] for name in per_row}
        for name in ("count", "degenerate_per_ray"):
            value = getattr(self, name)
            sliced[name] = None if value is None else value[index]
        return dataclasses.replace(self, **sliced)


def _gather(values: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    extra = values.shape[index.dim():]
    expanded = index.reshape(index.shape + (1,) * len(extra)).expand(index.shape + extra)
    return torch.gather(values, index.dim() - 1, expanded)


def warp_terms(expr, theta, camera: Camera, traj: Trajectory, cfg: WarpConfig, scene_scale: float, u: torch.Tensor):
    """Per-point warp quantities as functions of u (θ fixed); traceable by forward mode."""
    lambda_d, eps_pad = cfg.scaled(scene_scale)
    origin, direction = camera.ray_tensors(u)
    t, x, _ = replay_trajectory(expr, theta, origin, direction, traj)
    f, g = sdf_and_spatial_grad(expr, x, theta)
    gn2 = (g * g).sum(-1)
    valid = traj.valid
    degenerate = valid & (gn2 < NORMAL_EPS**2)
    ok = valid & ~degenerate
    if camera.kind == "pinhole":
        ok = ok & (t > T_MIN)
    score = silhouette_score(f, g, direction[..., None, :], lambda_d)
    w = torch.where(ok, harmonic_weight(score, cfg.gamma, eps_pad), torch.zeros_like(score))
    wq = quadrature_weights(t, w, ok)
    wk, order = topk_weights(wq, cfg.k, ok)
    omega, denominator = normalized(wk, cfg.eps_den)

    width = t.shape[-1]
    keep = width if cfg.k == ALL else min(int(cfg.k), width)
    support = order[..., :keep]
    t_safe = torch.where(t > T_MIN, t, torch.ones_like(t))
    u_points = u[..., None, :].expand(t.shape + (2,))
    proj, _ = pseudo_inverse(camera.screen_jacobian(u_points, t_safe))
    pg = (proj @ g[..., None])[..., 0]
    safe_gn2 = torch.where(ok, gn2, torch.ones_like(gn2))
    a = torch.where(ok[..., None], -omega[..., None] * pg / safe_gn2[..., None], torch.zeros_like(pg))
    diagnostics = (t, f, score, w, wq, wk, omega, denominator)
    return _gather(x, support), _gather(a, support), support, diagnostics, degenerate.sum(-1)


def warp_eval(scene, theta, camera: Camera, traj: Trajectory, cfg: Optional[WarpConfig] = None, u=None) -> WarpEval:
    """Build the factored warp for the rays of ``traj``

    Args:
        scene: SdfScene (its bounding radius sets the scale of λ_d and ε_pad)
        theta: Parameter vector θ
        camera (Camera): Camera that generated the rays
        traj (Trajectory): Recorded marches of those rays
        cfg (Optional[WarpConfig]): Warp settings
        u: Screen points of the rays; defaults to ``traj.ray.u``

    Returns:
        WarpEval: Factored warp with per-point diagnostics
    """
    cfg = cfg or WarpConfig()
    expr = expr_of(scene)
    th = as_tensor(theta).detach()
    u = torch.as_tensor(traj.ray.u if u is None else u, dtype=DTYPE).reshape(-1, 2)
    scale = float(getattr(scene, "bounding_radius", 1.0))
    x, a, support, diagnostics, degenerate = warp_terms(expr, th, camera, traj, cfg, scale, u)
    x_dual, a_dual = with_screen_tangents(lambda uu: warp_terms(expr, th, camera, traj, cfg, scale, uu)[:2], u)
    t, f, score, w, wq, wk, omega, denominator = diagnostics
    return WarpEval(
        expr=expr,
        theta=th,
        x=x,
        dx=x_dual.tangents,
        a=a,
        da=a_dual.tangents,
        support=support,
        t=t,
        f=f,
        score=score,
        w=w,
        wq=wq,
        wk=wk,
        omega=omega,
        denominator=denominator,
        degenerate_per_ray=degenerate,
        count=traj.count,
    )


def warp_at(scene, theta, camera: Camera, u, cfg: Optional[WarpConfig] = None, opts: Optional[TracerOptions] = None) -> WarpEval:
    """Trace the rays through screen points u and build their warp."""
    u = torch.as_tensor(u, dtype=DTYPE).reshape(-1, 2)
    traj = sphere_trace(scene, theta, generate_ray(camera, u), opts)
    return warp_eval(scene, theta, camera, traj, cfg, u)
