"""Per-pixel gradient estimator

The derivative of a pixel integral I = ∫_pixel L(u; θ) du is assembled as

    ∂θI = ∫ ∂θL + ∇u·(L·V) du − ∮ L·(V·n) dl

(interior term, warp divergence term, pixel-boundary term). Each term is
built as a *surrogate*: a function of a probe θ' whose value at θ' = θ is the
estimate's primal part and whose θ'-derivative at θ is the gradient
contribution. One surrogate then serves forward mode (a θ-direction v), reverse
mode (seeded by image residuals) and dense Jacobians alike.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import torch
from loguru import logger

from sdfwarp.diff.adjoint import dense_reverse, directional, nested_adjoint
from sdfwarp.diff.screen import warn_branch_ties, with_screen_tangents
from sdfwarp.errors import ConfigError
from sdfwarp.render.camera import Camera
from sdfwarp.render.integrator import HitRecord, radiance_field, trace_screen
from sdfwarp.render.sampling import PixelSampleSet, SampleBatch, batch_samples
from sdfwarp.scene.params import DTYPE, as_tensor
from sdfwarp.scene.scene import expr_of
from sdfwarp.tracer.sphere import TracerOptions
from sdfwarp.warp.field import WarpEval, warp_eval
from sdfwarp.warp.weights import WarpConfig

MODES = ("warped", "naive")

Surrogate = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class EstimatorConfig:
    """Gradient estimator settings

    Attributes:
        mode (str): "warped" (interior + divergence + pixel boundary) or "naive" (interior only)
        interior_spp (int): Stratified interior samples per pixel
        boundary_spp (int): Boundary samples per pixel, spread evenly over the four edges
        warp (WarpConfig): Warp settings
        seed (int): Sampling seed
        tracer (TracerOptions): Sphere-tracer settings
    """

    mode: str = "warped"
    interior_spp: int = 2
    boundary_spp: int = 4
    warp: WarpConfig = field(default_factory=WarpConfig)
    seed: int = 0
    tracer: TracerOptions = field(default_factory=TracerOptions)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.interior_spp < 1:
            raise ConfigError("interior_spp must be at least 1")
        if self.boundary_spp < 0 or self.boundary_spp % 4:
            raise ConfigError(f"boundary_spp must be a non-negative multiple of 4, got {self.boundary_spp}")

    @property
    def warped(self) -> bool:
        return self.mode == "warped"


@dataclass
class Contribution:
    """Per-sample surrogate of one gradient term

    Attributes:
        fn (Surrogate): θ' ↦ (S, 3) per-sample values; ∂θ' at ``theta`` is the contribution
        theta (torch.Tensor): Expansion point
        counters (Dict[str, int]): Skipped-sample counts
    """

    fn: Surrogate
    theta: torch.Tensor
    counters: Dict[str, int] = field(default_factory=dict)

    def value(self) -> torch.Tensor:
        with torch.no_grad():
            return self.fn(self.theta)

    def directional(self, direction) -> torch.Tensor:
        """(S, 3) derivatives along a θ-direction."""
        _, tangent = directional(self.fn, self.theta, torch.as_tensor(direction, dtype=DTYPE))
        return tangent

    def dense(self) -> torch.Tensor:
        """(S, 3, N) Jacobian."""
        return dense_reverse(self.fn, self.theta)

    def adjoint(self, seeds) -> torch.Tensor:
        """Σ seeds·∂θ' values, shape (N,); ``seeds`` broadcasts against (S, 3)."""
        seeds = torch.as_tensor(seeds, dtype=DTYPE)
        return nested_adjoint(lambda p: (self.fn(p) * seeds).sum(), self.theta)


def _merge(*counters: Dict[str, int]) -> Dict[str, int]:
    merged: Dict[str, int] = {}
    for c in counters:
        for key, value in c.items():
            merged[key] = merged.get(key, 0) + value
    return merged


def _centered(fn: Surrogate, theta: torch.Tensor) -> Surrogate:
    with torch.no_grad():
        base = fn(theta)
    return lambda p: fn(p) - base


def _record_counters(scene, theta: torch.Tensor, record: HitRecord, where: str, warn: bool = True) -> Dict[str, int]:
    summary = record.traj.summary()
    ties = 0
    if bool(record.hit.any()):
        x = record.traj.ray.at(record.t0)[record.hit]
        ties = int(expr_of(scene).ties(x, theta).sum())
        if warn:
            warn_branch_ties(ties, where)
    return {
        "samples": summary["rays"],
        "grazing": int(record.grazing.sum()),
        "max_steps": summary["max_steps"],
        "branch_ties": ties,
    }


def _trace(scene, theta, camera: Camera, u, cfg: EstimatorConfig) -> HitRecord:
    return trace_screen(scene, theta, camera, u, cfg.tracer)


def interior_term(
    scene, theta, camera: Camera, u, cfg: Optional[EstimatorConfig] = None, record: Optional[HitRecord] = None
) -> Contribution:
    """∂θL(u; θ) at fixed screen points u, as a surrogate returning L(u; θ')

    Grazing hits keep their radiance but contribute no derivative.
    """
    cfg = cfg or EstimatorConfig()
    th = as_tensor(theta).detach()
    record = record or _trace(scene, th, camera, u, cfg)
    field_fn = radiance_field(scene, camera, record)
    grazing = record.grazing[:, None]
    with torch.no_grad():
        frozen = field_fn(record.u, th)

    def fn(p):
        return torch.where(grazing, frozen, field_fn(record.u, p))

    return Contribution(fn=fn, theta=th, counters=_record_counters(scene, th, record, "interior"))


def divergence_term(
    scene,
    theta,
    camera: Camera,
    u,
    cfg: Optional[EstimatorConfig] = None,
    record: Optional[HitRecord] = None,
    warp: Optional[WarpEval] = None,
) -> Contribution:
    """∇u·(L·V) = ∇uL·V + L·(∇u·V) at screen points u

    ∇uL comes from screen tangents of the radiance at θ, V and ∇u·V from the
    factored warp; grazing samples are dropped. ``record`` and ``warp`` may be
    rows of a larger shared batch.
    """
    cfg = cfg or EstimatorConfig()
    th = as_tensor(theta).detach()
    shared = record is not None
    record = record or _trace(scene, th, camera, u, cfg)
    field_fn = radiance_field(scene, camera, record)
    radiance = with_screen_tangents(lambda uu: field_fn(uu, th), record.u)
    keep = (~record.grazing)[:, None].to(DTYPE)
    grad_l = radiance.tangents.detach() * keep[..., None]  # (S, 3, 2)
    value = radiance.value.detach() * keep
    warp = warp or warp_eval(scene, th, camera, record.traj, cfg.warp, record.u)
    potential = _centered(warp.potential, th)
    divergence = _centered(warp.divergence_potential, th)

    def fn(p):
        phi = potential(p)  # (S, 2)
        return (grad_l * phi[:, None, :]).sum(-1) + value * divergence(p)[:, None]

    counters = _record_counters(scene, th, record, "divergence", warn=not shared)
    counters["degenerate"] = warp.degenerate
    return Contribution(fn=fn, theta=th, counters=counters)


def pixel_boundary_term(
    scene,
    theta,
    camera: Camera,
    samples: Union[PixelSampleSet, SampleBatch],
    cfg: Optional[EstimatorConfig] = None,
    record: Optional[HitRecord] = None,
    warp: Optional[WarpEval] = None,
) -> Contribution:
    """−L·(V·n_b)·w_b per boundary sample, so the sum over samples is −∮ L·(V·n) dl."""
    cfg = cfg or EstimatorConfig()
    th = as_tensor(theta).detach()
    if samples.boundary.shape[0] == 0:
        return Contribution(fn=lambda p: p.new_zeros(0, 3), theta=th)
    record = record or _trace(scene, th, camera, samples.boundary, cfg)
    with torch.no_grad():
        radiance = radiance_field(scene, camera, record)(record.u, th)
    warp = warp or warp_eval(scene, th, camera, record.traj, cfg.warp, record.u)
    potential = _centered(warp.potential, th)
    scale = (-samples.weights)[:, None] * radiance  # (Bb, 3)
    normals = samples.normals

    def fn(p):
        flux = (potential(p) * normals).sum(-1)  # (Bb,)
        return scale * flux[:, None]

    counters = _record_counters(scene, th, record, "boundary")
    counters["degenerate"] = warp.degenerate
    return Contribution(fn=fn, theta=th, counters=counters)


@dataclass
class PixelEstimate:
    """Gradient estimate of one pixel integral

    Attributes:
        pixel (Tuple[int, int]): (row, col)
        value (torch.Tensor): (3,) for a direction, (N,) for seeds, (N, 3) dense
        variance (Optional[torch.Tensor]): (3,) estimator variance (direction mode only)
        counters (Dict[str, int]): Skipped and traced sample counts
    """

    pixel: Tuple[int, int]
    value: torch.Tensor
    variance: Optional[torch.Tensor] = None
    counters: Dict[str, int] = field(default_factory=dict)


@dataclass
class BatchSurrogate:
    """All terms of a batch of P pixels sharing one trace and one warp

    Interior and divergence samples are stored pixel by pixel, ``interior_spp``
    rows each; boundary samples ``boundary_spp`` rows each.
    ``total(θ')`` is the (P, 3) surrogate of the pixel integrals.
    """

    pixels: List[Tuple[int, int]]
    area: float
    theta: torch.Tensor
    interior_spp: int
    boundary_spp: int
    interior: Contribution
    divergence: Optional[Contribution] = None
    boundary: Optional[Contribution] = None

    def _inner(self, rows: torch.Tensor) -> torch.Tensor:
        return rows.reshape(len(self.pixels), self.interior_spp, 3)

    def _edge(self, rows: torch.Tensor) -> torch.Tensor:
        return rows.reshape(len(self.pixels), self.boundary_spp, 3)

    def total(self, p: torch.Tensor) -> torch.Tensor:
        inner = self.interior.fn(p)
        if self.divergence is not None:
            inner = inner + self.divergence.fn(p)
        out = self.area * self._inner(inner).mean(1)
        if self.boundary is not None and self.boundary_spp:
            out = out + self._edge(self.boundary.fn(p)).sum(1)
        return out

    def directional(self, direction) -> Tuple[torch.Tensor, torch.Tensor]:
        """(P, 3) derivatives along a θ-direction and their (P, 3) estimator variance."""
        v = torch.as_tensor(direction, dtype=DTYPE)
        inner = self.interior.directional(v)
        if self.divergence is not None:
            inner = inner + self.divergence.directional(v)
        inner = self._inner(inner)
        n = self.interior_spp
        value = self.area * inner.mean(1)
        variance = self.area**2 * (inner.var(1) / n if n > 1 else torch.zeros_like(value))
        if self.boundary is not None and self.boundary_spp:
            edge = self._edge(self.boundary.directional(v))
            value = value + edge.sum(1)
            if self.boundary_spp > 1:
                variance = variance + self.boundary_spp * edge.var(1)
        return value, variance

    def adjoint(self, seeds) -> torch.Tensor:
        """Σ_p seeds_p·∂θI_p of length N; ``seeds`` broadcasts against (P, 3)."""
        seeds = torch.as_tensor(seeds, dtype=DTYPE)
        return nested_adjoint(lambda p: (self.total(p) * seeds).sum(), self.theta)

    @property
    def counters(self) -> Dict[str, int]:
        merged = dict(self.interior.counters)
        if self.divergence is not None:
            merged["degenerate"] = self.divergence.counters.get("degenerate", 0)
        if self.boundary is not None:
            merged = _merge(merged, self.boundary.counters)
        return merged


class PixelSurrogate(BatchSurrogate):
    """A batch of one pixel; ``total(θ')`` is its (3,) pixel-integral surrogate."""

    @property
    def pixel(self) -> Tuple[int, int]:
        return self.pixels[0]

    def total(self, p: torch.Tensor) -> torch.Tensor:
        return super().total(p)[0]

    def directional(self, direction) -> Tuple[torch.Tensor, torch.Tensor]:
        value, variance = super().directional(direction)
        return value[0], variance[0]


def _build(
    cls, scene, theta, camera: Camera, pixels: Sequence[Tuple[int, int]], cfg: EstimatorConfig, iteration: int
) -> BatchSurrogate:
    th = as_tensor(theta).detach()
    boundary_spp = cfg.boundary_spp if cfg.warped else 0
    samples = batch_samples(camera, list(pixels), cfg.interior_spp, boundary_spp, cfg.seed, iteration)
    base = dict(
        pixels=samples.pixels,
        area=camera.pixel_area,
        theta=th,
        interior_spp=cfg.interior_spp,
        boundary_spp=boundary_spp,
    )
    if not cfg.warped:
        record = _trace(scene, th, camera, samples.interior, cfg)
        return cls(interior=interior_term(scene, th, camera, samples.interior, cfg, record), **base)

    # one trace and one warp for interior and boundary samples together
    n = samples.interior.shape[0]
    record = _trace(scene, th, camera, torch.cat([samples.interior, samples.boundary]), cfg)
    warp = warp_eval(scene, th, camera, record.traj, cfg.warp, record.u)
    inside, edge = slice(0, n), slice(n, None)
    interior = interior_term(scene, th, camera, samples.interior, cfg, record.rows(inside))
    divergence = divergence_term(scene, th, camera, samples.interior, cfg, record.rows(inside), warp.rows(inside))
    boundary = None
    if boundary_spp:
        boundary = pixel_boundary_term(scene, th, camera, samples, cfg, record.rows(edge), warp.rows(edge))
    return cls(interior=interior, divergence=divergence, boundary=boundary, **base)


def batch_surrogate(
    scene, theta, camera: Camera, pixels: Sequence[Tuple[int, int]], cfg: Optional[EstimatorConfig] = None,
    iteration: int = 0,
) -> BatchSurrogate:
    """Surrogates of several pixels of one camera from a single trace and warp."""
    return _build(BatchSurrogate, scene, theta, camera, pixels, cfg or EstimatorConfig(), iteration)


def pixel_surrogate(
    scene, theta, camera: Camera, pixel: Tuple[int, int], cfg: Optional[EstimatorConfig] = None, iteration: int = 0
) -> PixelSurrogate:
    return _build(PixelSurrogate, scene, theta, camera, [tuple(pixel)], cfg or EstimatorConfig(), iteration)


def pixel_gradient(
    scene,
    theta,
    camera: Camera,
    pixel: Tuple[int, int],
    cfg: Optional[EstimatorConfig] = None,
    direction=None,
    seeds=None,
    iteration: int = 0,
) -> PixelEstimate:
    """Estimate ∂θ of the pixel integral ∫_pixel L du

    Args:
        scene: SdfScene
        theta: Parameter vector
        camera (Camera): Camera and film
        pixel (Tuple[int, int]): (row, col)
        cfg (Optional[EstimatorConfig]): Estimator settings
        direction: θ-direction v; the estimate is then ∂θI·v per channel, with variance
        seeds: RGB adjoint seeds; the estimate is then Σ_c seeds_c·∂θI_c of length N
        iteration (int): Sampling iteration (decorrelates optimization steps)

    Returns:
        PixelEstimate: The estimate, (N, 3) dense when neither direction nor seeds are given
    """
    cfg = cfg or EstimatorConfig()
    surrogate = pixel_surrogate(scene, theta, camera, pixel, cfg, iteration)
    counters = surrogate.counters
    if counters.get("grazing"):
        logger.debug(f"Pixel {pixel}: {counters['grazing']} grazing sample(s) skipped")
    if direction is not None:
        value, variance = surrogate.directional(direction)
        return PixelEstimate(pixel=surrogate.pixel, value=value, variance=variance, counters=counters)
    if seeds is not None:
        return PixelEstimate(pixel=surrogate.pixel, value=surrogate.adjoint(seeds), counters=counters)
    value = dense_reverse(surrogate.total, surrogate.theta).T
    return PixelEstimate(pixel=surrogate.pixel, value=value, counters=counters)
