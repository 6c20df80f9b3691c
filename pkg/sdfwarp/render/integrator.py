"""Radiance evaluation and the box-filtered Monte Carlo pixel integral."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from loguru import logger
from tqdm import tqdm

from sdfwarp.errors import ConfigError
from sdfwarp.render.camera import Camera, generate_ray
from sdfwarp.render.sampling import chunk_pixels, pixel_samples
from sdfwarp.render.shading import background, shade
from sdfwarp.scene.params import DTYPE, as_tensor
from sdfwarp.scene.scene import expr_of, sdf_and_spatial_grad
from sdfwarp.tracer.sphere import (
    TracerOptions,
    Trajectory,
    attach_hit_distance,
    hit_constants,
    sphere_trace,
)

RAYS_PER_RENDER = 65536


@dataclass
class HitRecord:
    """No-grad trace of a batch of screen points plus the constants of the IFT re-attachment

    Attributes:
        u (torch.Tensor): (B, 2) screen points
        traj (Trajectory): Recorded marches
        t0 (torch.Tensor): (B,) hit distances (0 for non-hits)
        f0 (torch.Tensor): (B,) SDF residual at the hit
        gd0 (torch.Tensor): (B,) ∂x f·d at the hit (−1 for non-hits and grazing hits)
        grazing (torch.Tensor): (B,) hits with |∂x f·d| ≤ graze_eps
    """

    u: torch.Tensor
    traj: Trajectory
    t0: torch.Tensor
    f0: torch.Tensor
    gd0: torch.Tensor
    grazing: torch.Tensor

    @property
    def hit(self) -> torch.Tensor:
        return self.traj.hit

    def rows(self, index) -> "HitRecord":
        """The records of a row slice or mask."""
        return HitRecord(
            u=self.u[index],
            traj=self.traj.select(index),
            t0=self.t0[index],
            f0=self.f0[index],
            gd0=self.gd0[index],
            grazing=self.grazing[index],
        )


def trace_screen(scene, theta, camera: Camera, u, opts: Optional[TracerOptions] = None) -> HitRecord:
    opts = (opts or TracerOptions()).resolved(scene)
    u = torch.as_tensor(u, dtype=DTYPE).reshape(-1, 2)
    traj = sphere_trace(scene, theta, generate_ray(camera, u), opts)
    t0, f0, gd0, grazing = hit_constants(expr_of(scene), as_tensor(theta), traj, opts.graze_eps)
    return HitRecord(u=u, traj=traj, t0=t0, f0=f0, gd0=gd0, grazing=grazing)


def radiance_field(scene, camera: Camera, record: HitRecord):
    """L(u, θ) as a differentiable function, with the visibility of ``record`` frozen.

    The returned callable maps (u of shape (B, 2), θ) to (B, 3). Hit rows are
    shaded at the re-attached intersection, all other rows return the background.
    """
    expr = expr_of(scene)
    material = scene.material
    hit = record.hit
    t0, f0, gd0 = record.t0, record.f0, record.gd0

    def field_fn(u: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
        origin, direction = camera.ray_tensors(u)
        t = attach_hit_distance(expr, theta, origin, direction, t0, f0, gd0)
        x = origin + t[..., None] * direction
        _, grad = sdf_and_spatial_grad(expr, x, theta)
        lit = shade(x, grad, direction, material, theta, strict=False)
        return torch.where(hit[:, None], lit, background(material, hit.shape))

    return field_fn


def radiance(scene, theta, camera: Camera, u, opts: Optional[TracerOptions] = None) -> Tuple[torch.Tensor, Trajectory]:
    """RGB radiance at screen points u (shape (2,) or (B, 2)) and the traced trajectories.

    Rays stopped at max_steps are shaded as misses.
    """
    u = torch.as_tensor(u, dtype=DTYPE)
    single = u.dim() == 1
    record = trace_screen(scene, theta, camera, u, opts)
    with torch.no_grad():
        rgb = radiance_field(scene, camera, record)(record.u, as_tensor(theta))
    return (rgb[0] if single else rgb), record.traj


@dataclass
class RenderResult:
    """Result of rendering an image

    Attributes:
        image (np.ndarray): (H, W, 3) mean radiance per pixel
        spp (int): Interior samples per pixel
        render_time_s (Optional[float]): Wall time in seconds
        rays_per_s (Optional[float]): Throughput
        counters (Dict[str, int]): Ray termination counts
    """

    image: np.ndarray
    spp: int
    render_time_s: Optional[float] = None
    rays_per_s: Optional[float] = None
    counters: Dict[str, int] = field(default_factory=dict)


def _tiles(camera: Camera, rows_per_tile: int) -> List[List[Tuple[int, int]]]:
    tiles = []
    for start in range(0, camera.height, rows_per_tile):
        rows = range(start, min(start + rows_per_tile, camera.height))
        tiles.append([(r, c) for r in rows for c in range(camera.width)])
    return tiles


def render_pixels(
    scene, theta, camera: Camera, pixels: Sequence[Tuple[int, int]], spp: int, seed: int = 0, iteration: int = 0,
    opts: Optional[TracerOptions] = None,
) -> Tuple[torch.Tensor, Dict[str, int]]:
    """Mean radiance (P, 3) of a list of pixels with stratified interior samples."""
    if not pixels:
        return torch.zeros(0, 3, dtype=DTYPE), {}
    means, counters = [], {}
    for chunk in chunk_pixels(list(pixels), spp, RAYS_PER_RENDER):
        u = torch.cat([pixel_samples(camera, r, c, spp, 0, seed, iteration).interior for r, c in chunk])
        rgb, traj = radiance(scene, theta, camera, u, opts)
        means.append(rgb.reshape(len(chunk), spp, 3).mean(dim=1))
        for key, value in traj.summary().items():
            if key != "mean_steps":
                counters[key] = counters.get(key, 0) + value
    return torch.cat(means), counters


def render_image(
    scene,
    theta,
    camera: Camera,
    spp: int = 16,
    seed: int = 0,
    opts: Optional[TracerOptions] = None,
    threads: int = 1,
    rows_per_tile: int = 4,
    quiet: bool = False,
) -> RenderResult:
    """Render the box-filtered image (mean radiance per pixel)

    Args:
        scene: SdfScene
        theta: Parameter vector
        camera (Camera): Camera and film
        spp (int): Stratified interior samples per pixel
        seed (int): Sampling seed; the image is a pure function of it
        opts (Optional[TracerOptions]): Tracer settings
        threads (int): Worker threads over row tiles
        rows_per_tile (int): Rows per work item
        quiet (bool): Suppress logs and the progress bar

    Returns:
        RenderResult: The image and timing information
    """
    if spp < 1:
        raise ConfigError("spp must be at least 1")
    start = time.time()
    image = np.zeros((camera.height, camera.width, 3), dtype=np.float64)
    counters: Dict[str, int] = {}

    def work(tile):
        values, summary = render_pixels(scene, theta, camera, tile, spp, seed, 0, opts)
        return tile, values, summary

    tiles = _tiles(camera, rows_per_tile)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for tile, values, summary in tqdm(pool.map(work, tiles), total=len(tiles), desc="render", disable=quiet):
            for (r, c), rgb in zip(tile, values.numpy()):
                image[r, c] = rgb
            for key in ("hits", "escaped", "max_steps"):
                counters[key] = counters.get(key, 0) + summary.get(key, 0)

    elapsed = time.time() - start
    rays = camera.width * camera.height * spp
    if not quiet:
        logger.info(f"Rendered {camera.width}×{camera.height} at {spp} spp in {elapsed:.2f}s ({rays / max(elapsed, 1e-9):.0f} rays/s)")
        if counters.get("max_steps"):
            logger.warning(f"{counters['max_steps']} rays stopped at max_steps and were shaded as misses")
    return RenderResult(
        image=image,
        spp=spp,
        render_time_s=elapsed,
        rays_per_s=rays / elapsed if elapsed > 0 else None,
        counters=counters,
    )


def pixel_integral(scene, theta, camera: Camera, row: int, col: int, spp: int, seed: int = 0, iteration: int = 0,
                   opts: Optional[TracerOptions] = None) -> torch.Tensor:
    """∫ L du over one pixel (area × mean radiance), RGB."""
    values, _ = render_pixels(scene, theta, camera, [(row, col)], spp, seed, iteration, opts)
    return values[0] * camera.pixel_area
