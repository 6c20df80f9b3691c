"""Counter-based pixel sampling

Every random draw comes from its own Philox stream keyed by
(seed, pixel or edge id, iteration, stream), so samples do not depend on the
order or the thread in which pixels are processed. Boundary samples are keyed by
the global id of the pixel edge they lie on: two neighbouring pixels see the
same points on their shared edge, with opposite outward normals.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import torch

from sdfwarp.errors import ConfigError
from sdfwarp.render.camera import Camera

DTYPE = torch.float64

INTERIOR_STREAM = 0
BOUNDARY_STREAM = 1
EIKONAL_STREAM = 2
PIXEL_STREAM = 3

XI_EPS = 1e-12


def philox(seed: int, key: int, iteration: int = 0, stream: int = INTERIOR_STREAM) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed), counter=[0, int(key), int(iteration), int(stream)]))


def stratified_unit(n: int, rng: np.random.Generator) -> np.ndarray:
    """n points in (0, 1)²: a jittered grid when n is a square, N-rooks otherwise."""
    side = math.isqrt(n)
    if side * side == n:
        i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        cells = np.stack([i.reshape(-1), j.reshape(-1)], axis=1)
        xi = (cells + rng.random((n, 2))) / side
    else:
        rows = np.stack([rng.permutation(n), rng.permutation(n)], axis=1)
        xi = (rows + rng.random((n, 2))) / n
    return np.clip(xi, XI_EPS, 1.0 - XI_EPS)


def horizontal_edge_id(camera: Camera, row: int, col: int) -> int:
    return row * camera.width + col


def vertical_edge_id(camera: Camera, row: int, col: int) -> int:
    return (camera.height + 1) * camera.width + row * (camera.width + 1) + col


@dataclass
class PixelSampleSet:
    """Interior and boundary samples of one pixel

    Attributes:
        pixel (Tuple[int, int]): (row, col)
        interior (torch.Tensor): (n, 2) screen points strictly inside the pixel
        boundary (torch.Tensor): (m, 2) screen points on the pixel edges
        normals (torch.Tensor): (m, 2) outward unit normals of the edges
        weights (torch.Tensor): (m,) line-measure weight of each boundary sample (edge length / samples per edge)
        edge_ids (torch.Tensor): (m,) global edge id of each boundary sample
    """

    pixel: Tuple[int, int]
    interior: torch.Tensor
    boundary: torch.Tensor
    normals: torch.Tensor
    weights: torch.Tensor
    edge_ids: torch.Tensor


def edge_samples(edge_id: int, count: int, seed: int, iteration: int) -> np.ndarray:
    """Stratified positions in (0, 1) along one pixel edge, shared by both adjacent pixels."""
    rng = philox(seed, edge_id, iteration, BOUNDARY_STREAM)
    xi = (np.arange(count) + rng.random(count)) / count
    return np.clip(xi, XI_EPS, 1.0 - XI_EPS)


def pixel_samples(
    camera: Camera,
    row: int,
    col: int,
    interior_spp: int = 2,
    boundary_spp: int = 4,
    seed: int = 0,
    iteration: int = 0,
) -> PixelSampleSet:
    if interior_spp < 1:
        raise ConfigError("interior_spp must be at least 1")
    if boundary_spp < 0 or boundary_spp % 4:
        raise ConfigError(f"boundary_spp must be a non-negative multiple of 4, got {boundary_spp}")
    if not (0 <= row < camera.height and 0 <= col < camera.width):
        raise ConfigError(f"Pixel ({row}, {col}) outside the {camera.height}×{camera.width} film")

    lo1, hi1, lo2, hi2 = camera.pixel_bounds(row, col)
    dx, dy = camera.pixel_size
    pixel_id = row * camera.width + col
    xi = stratified_unit(interior_spp, philox(seed, pixel_id, iteration, INTERIOR_STREAM))
    interior = np.stack([lo1 + xi[:, 0] * dx, lo2 + xi[:, 1] * dy], axis=1)

    per_edge = boundary_spp // 4
    edges = [
        # (edge id, horizontal, fixed coordinate, normal)
        (horizontal_edge_id(camera, row, col), True, lo2, (0.0, -1.0)),
        (horizontal_edge_id(camera, row + 1, col), True, hi2, (0.0, 1.0)),
        (vertical_edge_id(camera, row, col), False, lo1, (-1.0, 0.0)),
        (vertical_edge_id(camera, row, col + 1), False, hi1, (1.0, 0.0)),
    ]
    points: List[np.ndarray] = []
    normals, weights, ids = [], [], []
    for edge_id, horizontal, fixed, normal in edges:
        if per_edge == 0:
            break
        s = edge_samples(edge_id, per_edge, seed, iteration)
        if horizontal:
            pts = np.stack([lo1 + s * dx, np.full(per_edge, fixed)], axis=1)
            length = dx
        else:
            pts = np.stack([np.full(per_edge, fixed), lo2 + s * dy], axis=1)
            length = dy
        points.append(pts)
        normals.append(np.tile(normal, (per_edge, 1)))
        weights.append(np.full(per_edge, length / per_edge))
        ids.append(np.full(per_edge, edge_id))

    def as_tensor(chunks, shape):
        if not chunks:
            return torch.zeros(shape, dtype=DTYPE)
        return torch.from_numpy(np.concatenate(chunks)).to(DTYPE)

    return PixelSampleSet(
        pixel=(row, col),
        interior=torch.from_numpy(interior).to(DTYPE),
        boundary=as_tensor(points, (0, 2)),
        normals=as_tensor(normals, (0, 2)),
        weights=as_tensor(weights, (0,)),
        edge_ids=torch.from_numpy(np.concatenate(ids)) if ids else torch.zeros(0, dtype=torch.long),
    )


def sample_pixels(camera: Camera, count: int, seed: int, iteration: int) -> List[Tuple[int, int]]:
    """A batch of distinct pixels for one optimization iteration."""
    total = camera.width * camera.height
    picks = philox(seed, 0, iteration, PIXEL_STREAM).choice(total, size=min(count, total), replace=False)
    return [(int(p) // camera.width, int(p) % camera.width) for p in np.sort(picks)]


def coverage_probe_points(camera: Camera, row: int, col: int, side: int = 4) -> torch.Tensor:
    """side×side sub-cell centers of a pixel."""
    lo1, _, lo2, _ = camera.pixel_bounds(row, col)
    dx, dy = camera.pixel_size
    offsets = (np.arange(side) + 0.5) / side
    g1, g2 = np.meshgrid(lo1 + offsets * dx, lo2 + offsets * dy, indexing="xy")
    return torch.from_numpy(np.stack([g1.reshape(-1), g2.reshape(-1)], axis=1)).to(DTYPE)


@dataclass
class SampleBatch:
    """Samples of several pixels, concatenated pixel by pixel

    Attributes:
        pixels (List[Tuple[int, int]]): (row, col) of each pixel, in sample order
        interior_spp (int): Interior samples per pixel
        boundary_spp (int): Boundary samples per pixel
        interior (torch.Tensor): (P·interior_spp, 2) screen points
        boundary (torch.Tensor): (P·boundary_spp, 2) screen points on pixel edges
        normals (torch.Tensor): (P·boundary_spp, 2) outward unit normals
        weights (torch.Tensor): (P·boundary_spp,) line-measure weights
    """

    pixels: List[Tuple[int, int]]
    interior_spp: int
    boundary_spp: int
    interior: torch.Tensor
    boundary: torch.Tensor
    normals: torch.Tensor
    weights: torch.Tensor

    def __len__(self) -> int:
        return len(self.pixels)


def batch_samples(
    camera: Camera,
    pixels: List[Tuple[int, int]],
    interior_spp: int = 2,
    boundary_spp: int = 4,
    seed: int = 0,
    iteration: int = 0,
) -> SampleBatch:
    """``pixel_samples`` of every pixel, stacked; each pixel draws from its own streams."""
    sets = [pixel_samples(camera, r, c, interior_spp, boundary_spp, seed, iteration) for r, c in pixels]
    if not sets:
        raise ConfigError("batch_samples needs at least one pixel")
    return SampleBatch(
        pixels=[s.pixel for s in sets],
        interior_spp=interior_spp,
        boundary_spp=boundary_spp,
        interior=torch.cat([s.interior for s in sets]),
        boundary=torch.cat([s.boundary for s in sets]),
        normals=torch.cat([s.normals for s in sets]),
        weights=torch.cat([s.weights for s in sets]),
    )


def chunk_pixels(pixels: List[Tuple[int, int]], rays_per_pixel: int, rays_per_batch: int) -> List[List[Tuple[int, int]]]:
    """Split a pixel list into consecutive chunks of at most ``rays_per_batch`` rays (at least one pixel each)."""
    size = max(1, rays_per_batch // max(1, rays_per_pixel))
    return [pixels[i : i + size] for i in range(0, len(pixels), size)]
