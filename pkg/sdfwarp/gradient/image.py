"""Gradient images and per-pixel classification."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np
import torch
from loguru import logger
from tqdm import tqdm

from sdfwarp.gradient.estimator import EstimatorConfig, batch_surrogate
from sdfwarp.gradient.oracle import parameter_direction
from sdfwarp.render.camera import Camera
from sdfwarp.render.imageio import write_pfm
from sdfwarp.render.integrator import trace_screen
from sdfwarp.render.sampling import chunk_pixels, coverage_probe_points
from sdfwarp.tracer.sphere import TracerOptions

EMPTY, INTERIOR, SILHOUETTE = "empty", "interior", "silhouette"
PIXEL_CLASSES = (EMPTY, INTERIOR, SILHOUETTE)

# Samples per batch; each keeps its whole padded trajectory while the warp is built.
RAYS_PER_BATCH = 4096


@dataclass
class GradientImage:
    """Per-pixel estimates of ∂θI·v

    Attributes:
        values (np.ndarray): (H, W, 3) gradient of each pixel integral
        variance (np.ndarray): (H, W, 3) estimator variance
        spp (int): Interior samples per pixel
        mode (str): Estimator mode
        counters (Dict[str, int]): Skipped and traced sample counts
        render_time_s (Optional[float]): Wall time in seconds
    """

    values: np.ndarray
    variance: np.ndarray
    spp: int
    mode: str = "warped"
    counters: Dict[str, int] = field(default_factory=dict)
    render_time_s: Optional[float] = None

    @property
    def total(self) -> np.ndarray:
        """Film-integral gradient (sum over pixels), RGB."""
        return self.values.sum(axis=(0, 1))

    def to_pfm(self, path: Union[str, Path]) -> Path:
        return write_pfm(path, self.values)


def pixel_classes(
    scene, theta, camera: Camera, opts: Optional[TracerOptions] = None, side: int = 4
) -> np.ndarray:
    """(H, W) array of "empty", "interior" or "silhouette" from a side×side coverage probe."""
    points = torch.cat([coverage_probe_points(camera, r, c, side) for r in range(camera.height) for c in range(camera.width)])
    record = trace_screen(scene, theta, camera, points, opts)
    hits = record.hit.reshape(camera.height, camera.width, side * side).numpy()
    covered = hits.sum(axis=-1)
    classes = np.full((camera.height, camera.width), SILHOUETTE, dtype=object)
    classes[covered == 0] = EMPTY
    classes[covered == side * side] = INTERIOR
    return classes


def gradient_image(
    scene,
    theta,
    camera: Camera,
    param,
    cfg: Optional[EstimatorConfig] = None,
    iteration: int = 0,
    threads: int = 1,
    rays_per_batch: int = RAYS_PER_BATCH,
    quiet: bool = False,
) -> GradientImage:
    """Render the gradient of every pixel integral along one θ-direction

    Args:
        scene: SdfScene
        theta: Parameter vector
        camera (Camera): Camera and film
        param: Selector (index, block name, "name[i]", "mlp_bias") or a θ-direction
        cfg (Optional[EstimatorConfig]): Estimator settings
        iteration (int): Sampling iteration
        threads (int): Worker threads over pixel batches
        rays_per_batch (int): Upper bound on the samples traced and warped together
        quiet (bool): Suppress logs and the progress bar

    Returns:
        GradientImage: Values, variance and counters
    """
    cfg = cfg or EstimatorConfig()
    direction, _ = parameter_direction(scene, param)
    start = time.time()
    values = np.zeros((camera.height, camera.width, 3))
    variance = np.zeros_like(values)
    counters: Dict[str, int] = {}

    if not bool(direction.abs().max() > 0):
        return GradientImage(values=values, variance=variance, spp=cfg.interior_spp, mode=cfg.mode, render_time_s=0.0)

    def work(chunk):
        surrogate = batch_surrogate(scene, theta, camera, chunk, cfg, iteration)
        value, var = surrogate.directional(direction)
        return chunk, value.detach().numpy(), var.detach().numpy(), surrogate.counters

    pixels = [(r, c) for r in range(camera.height) for c in range(camera.width)]
    rays_per_pixel = cfg.interior_spp + (cfg.boundary_spp if cfg.warped else 0)
    tiles = chunk_pixels(pixels, rays_per_pixel, rays_per_batch)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for chunk, value, var, chunk_counters in tqdm(
            pool.map(work, tiles), total=len(tiles), desc=f"gradient ({cfg.mode})", disable=quiet
        ):
            rows, cols = np.array(chunk).T
            values[rows, cols] = value
            variance[rows, cols] = var
            for key, count in chunk_counters.items():
                counters[key] = counters.get(key, 0) + count

    elapsed = time.time() - start
    if not quiet:
        logger.info(f"Gradient image {camera.width}×{camera.height} ({cfg.mode}, {cfg.interior_spp} spp) in {elapsed:.2f}s")
        if counters.get("grazing"):
            logger.warning(f"{counters['grazing']} grazing samples contributed no derivative")
        if counters.get("degenerate"):
            logger.warning(f"{counters['degenerate']} trajectory points skipped for a vanishing SDF gradient")
    return GradientImage(
        values=values, variance=variance, spp=cfg.interior_spp, mode=cfg.mode, counters=counters, render_time_s=elapsed
    )
