"""Probes of the warp's limit behaviour, reference warps and weight tables."""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from loguru import logger
from tqdm import tqdm

from sdfwarp.render.camera import Camera, generate_ray
from sdfwarp.scene.params import DTYPE, as_tensor
from sdfwarp.scene.scene import expr_of, sdf_and_spatial_grad
from sdfwarp.tracer.sphere import TracerOptions, sphere_trace
from sdfwarp.warp.field import T_MIN, pseudo_inverse, warp_at, warp_terms
from sdfwarp.warp.weights import ALL, WarpConfig, harmonic_weight, normalized, silhouette_score

WEIGHT_COLUMNS = ["ray_id", "i", "t_i", "f_i", "S_i", "w_i", "wq_i", "wk_i", "omega_bar_i", "omega_all_i"]


def _terms(scene, theta, camera: Camera, u, cfg: WarpConfig, opts: Optional[TracerOptions]):
    u = torch.as_tensor(u, dtype=DTYPE).reshape(-1, 2)
    traj = sphere_trace(scene, theta, generate_ray(camera, u), opts)
    scale = float(getattr(scene, "bounding_radius", 1.0))
    return traj, warp_terms(expr_of(scene), as_tensor(theta).detach(), camera, traj, cfg, scale, u)


def kronecker_probe(
    scene, theta, camera: Camera, u_sequence, cfg: Optional[WarpConfig] = None, opts: Optional[TracerOptions] = None
) -> np.ndarray:
    """max_i ω̄_i for each screen point of ``u_sequence`` (shape (n, 2))."""
    cfg = cfg or WarpConfig()
    with torch.no_grad():
        _, (_, _, _, diagnostics, _) = _terms(scene, theta, camera, u_sequence, cfg, opts)
    omega = diagnostics[6]
    return omega.max(dim=-1).values.numpy()


def lemma_bound_eval(delta: float, r_l: float, lambda_d: float, gamma: float) -> float:
    """(a + λ_d·δ/√(r_l²+δ²))^(−γ) · a with a = √(r_l²+δ²) − r_l

    ``a`` is evaluated as δ²/(√(r_l²+δ²) + r_l) so the bound stays accurate for
    tiny δ. The result diverges as δ → 0 exactly when γ > 2; for γ = 2 it tends
    to r_l / (2·λ_d²).
    """
    if delta <= 0 or r_l <= 0:
        raise ValueError("delta and r_l must be positive")
    root = math.sqrt(r_l * r_l + delta * delta)
    a = delta * delta / (root + r_l)
    return (a + lambda_d * delta / root) ** (-gamma) * a


def lemma_table(deltas: Sequence[float], r_l: float, lambda_d: float, gammas: Sequence[float]) -> pd.DataFrame:
    rows = [
        {"delta": d, "gamma": g, "bound": lemma_bound_eval(d, r_l, lambda_d, g)} for g in gammas for d in deltas
    ]
    return pd.DataFrame(rows)


def weights_table(
    scene, theta, camera: Camera, u, cfg: Optional[WarpConfig] = None, opts: Optional[TracerOptions] = None
) -> pd.DataFrame:
    """One row per recorded trajectory point with its score and weights at every stage

    ``omega_all_i`` is the normalized quadrature weight without top-k selection.
    """
    cfg = cfg or WarpConfig()
    with torch.no_grad():
        traj, (_, _, _, diagnostics, _) = _terms(scene, theta, camera, u, cfg, opts)
        t, f, score, w, wq, wk, omega, _ = diagnostics
        omega_all, _ = normalized(wq, cfg.eps_den)
    rows: List[dict] = []
    for ray_id in range(len(traj)):
        for i in range(int(traj.count[ray_id])):
            rows.append(
                {
                    "ray_id": ray_id,
                    "i": i,
                    "t_i": float(t[ray_id, i]),
                    "f_i": float(f[ray_id, i]),
                    "S_i": float(score[ray_id, i]),
                    "w_i": float(w[ray_id, i]),
                    "wq_i": float(wq[ray_id, i]),
                    "wk_i": float(wk[ray_id, i]),
                    "omega_bar_i": float(omega[ray_id, i]),
                    "omega_all_i": float(omega_all[ray_id, i]),
                }
            )
    return pd.DataFrame(rows, columns=WEIGHT_COLUMNS)


def dense_warp(
    scene,
    theta,
    camera: Camera,
    u,
    cfg: Optional[WarpConfig] = None,
    samples: int = 10_000,
    opts: Optional[TracerOptions] = None,
) -> torch.Tensor:
    """Reference warp (N, 2) of one screen point by uniform quadrature of the ray integral

    Integrates w(x(t))·G(x(t))·P(t) over [0, t_end] with ``samples`` midpoints and
    divides by ∫ w dt, where t_end is the hit distance or t_far for a miss.
    """
    cfg = cfg or WarpConfig()
    expr = expr_of(scene)
    th = as_tensor(theta).detach()
    u = torch.as_tensor(u, dtype=DTYPE).reshape(1, 2)
    ray = generate_ray(camera, u)
    traj = sphere_trace(scene, th, ray, opts)
    if bool(traj.hit[0]):
        t_end = float(traj.t_star[0])
    else:
        t_end = float(traj.t[0, int(traj.count[0]) - 1])
    lambda_d, eps_pad = cfg.scaled(float(getattr(scene, "bounding_radius", 1.0)))

    t = (torch.arange(samples, dtype=DTYPE) + 0.5) * (t_end / samples)
    origin, direction = ray.origin.reshape(1, 3), ray.direction.reshape(1, 3)
    x = origin + t[:, None] * direction
    f, g = sdf_and_spatial_grad(expr, x, th)
    gn2 = (g * g).sum(-1)
    ok = gn2 > 1e-16
    if camera.kind == "pinhole":
        ok = ok & (t > T_MIN)
    w = torch.where(ok, harmonic_weight(silhouette_score(f, g, direction, lambda_d), cfg.gamma, eps_pad), torch.zeros_like(t))
    proj, _ = pseudo_inverse(camera.screen_jacobian(u.expand(samples, 2), t))
    pg = (proj @ g[..., None])[..., 0]
    a = -(w / torch.where(ok, gn2, torch.ones_like(gn2)))[:, None] * pg
    total = w.sum()
    if float(total) <= 0:
        return torch.zeros(th.shape[0], 2, dtype=DTYPE)

    def potential(p):
        return (expr.evaluate(x, p)[:, None] * a).sum(0) / total

    return torch.func.jacrev(potential)(th).T


def warp_divergence_fd(
    scene,
    theta,
    camera: Camera,
    u,
    direction,
    cfg: Optional[WarpConfig] = None,
    h_pixels: float = 1e-4,
    opts: Optional[TracerOptions] = None,
) -> torch.Tensor:
    """(∇u·V)·v by central differences in u, re-tracing every shifted ray; shape (B,)."""
    cfg = cfg or WarpConfig()
    u = torch.as_tensor(u, dtype=DTYPE).reshape(-1, 2)
    v = torch.as_tensor(direction, dtype=DTYPE)
    total = torch.zeros(u.shape[0], dtype=DTYPE)
    for axis, h in enumerate(camera.pixel_size):
        step = torch.zeros(2, dtype=DTYPE)
        step[axis] = h * h_pixels
        plus, _ = warp_at(scene, theta, camera, u + step, cfg, opts).directional(v)
        minus, _ = warp_at(scene, theta, camera, u - step, cfg, opts).directional(v)
        total = total + (plus[:, axis] - minus[:, axis]) / (2.0 * step[axis])
    return total


@dataclass
class ContinuityReport:
    """Result of a dense screen scan across top-k set changes

    Attributes:
        u (np.ndarray): (n, 2) scanned screen points
        v (np.ndarray): (n, 2) directional warp V·v along the scan
        events (pd.DataFrame): One row per set change; ``step_change`` marks changes
            that coincide with a change of the trajectory's step count
    """

    u: np.ndarray
    v: np.ndarray
    events: pd.DataFrame = field(default_factory=pd.DataFrame)

    def _part(self, step_change: bool) -> pd.DataFrame:
        if not len(self.events):
            return self.events
        return self.events[self.events["step_change"] == step_change]

    @property
    def matched(self) -> pd.DataFrame:
        """Set changes between trajectories with the same number of points."""
        return self._part(False)

    @property
    def step_changes(self) -> pd.DataFrame:
        return self._part(True)

    @property
    def max_swapped_ratio(self) -> float:
        rows = self.matched
        return float(rows["swapped_ratio"].max()) if len(rows) else 0.0

    @property
    def max_jump_ratio(self) -> float:
        rows = self.matched
        return float(rows["jump_ratio"].max()) if len(rows) else 0.0

    @property
    def max_step_change_jump_ratio(self) -> float:
        rows = self.step_changes
        return float(rows["jump_ratio"].max()) if len(rows) else 0.0

    def passed(self, swap_tol: float = 1e-9, jump_tol: float = 5.0, min_events: int = 1) -> bool:
        """Enough matched set changes, each swapping only zero-weight points without a jump in V·v."""
        return len(self.matched) >= min_events and self.max_swapped_ratio < swap_tol and self.max_jump_ratio <= jump_tol


def _at(row: np.ndarray, index: int) -> float:
    return float(row[index]) if index < len(row) else 0.0


def topk_continuity_scan(
    scene,
    theta,
    camera: Camera,
    u_start,
    u_end,
    direction,
    cfg: Optional[WarpConfig] = None,
    samples: int = 10_000,
    chunk: int = 1024,
    neighbours: int = 2,
    opts: Optional[TracerOptions] = None,
    quiet: bool = False,
) -> ContinuityReport:
    """Scan V·v along a screen segment and inspect every top-k set change

    For each change between consecutive samples the report lists the largest top-k weight of a swapped
    point (relative to the largest weight of the row) and the jump |ΔV| relative
    to the mean of the neighbouring secants. Changes where the number of
    trajectory points differs are reported too, flagged by ``step_change``.
    """
    cfg = cfg or WarpConfig()
    if cfg.k == ALL:
        raise ValueError("Top-k continuity needs an integer k")
    v = torch.as_tensor(direction, dtype=DTYPE)
    s = torch.linspace(0.0, 1.0, samples, dtype=DTYPE)[:, None]
    u = torch.as_tensor(u_start, dtype=DTYPE) * (1 - s) + torch.as_tensor(u_end, dtype=DTYPE) * s

    values, sets, counts, weights = [], [], [], []
    starts = range(0, samples, chunk)
    for start in tqdm(starts, desc="top-k scan", disable=quiet):
        warp = warp_at(scene, theta, camera, u[start : start + chunk], cfg, opts)
        vv, _ = warp.directional(v)
        values.append(vv.detach())
        counts.append(warp.count)
        for row in range(warp.support.shape[0]):
            sets.append(frozenset(int(i) for i in warp.support[row].tolist()))
        weights.extend(row.numpy() for row in warp.wk.detach())
    vals = torch.cat(values).numpy()
    count = torch.cat(counts).numpy()
    wk = weights

    jumps = np.linalg.norm(np.diff(vals, axis=0), axis=1)
    events = []
    for i in range(samples - 1):
        if sets[i] == sets[i + 1]:
            continue
        swapped = sets[i] ^ sets[i + 1]
        peak = max(wk[i].max(), wk[i + 1].max())
        swapped_weight = max(max(_at(wk[i], j), _at(wk[i + 1], j)) for j in swapped)
        lo, hi = max(0, i - neighbours), min(len(jumps), i + neighbours + 1)
        secants = [jumps[j] for j in range(lo, hi) if j != i]
        secant = float(np.mean(secants)) if secants else 0.0
        events.append(
            {
                "index": i,
                "u1": float(u[i, 0]),
                "u2": float(u[i, 1]),
                "swapped": sorted(swapped),
                "step_change": bool(count[i] != count[i + 1]),
                "swapped_ratio": float(swapped_weight / peak) if peak > 0 else 0.0,
                "jump": float(jumps[i]),
                "jump_ratio": float(jumps[i] / secant) if secant > 0 else (0.0 if jumps[i] == 0 else math.inf),
            }
        )
    report = ContinuityReport(u=u.numpy(), v=vals, events=pd.DataFrame(events))
    if not quiet:
        logger.info(
            f"Top-k scan: {len(report.events)} set changes, {len(report.step_changes)} at step-count changes, "
            f"max swapped ratio {report.max_swapped_ratio:.2e}, max jump ratio {report.max_jump_ratio:.2f} "
            f"({report.max_step_change_jump_ratio:.2f} at step-count changes)"
        )
    return report

