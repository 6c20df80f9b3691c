"""Finite-difference reference gradients with common random numbers."""

from typing import Iterator, Optional, Tuple, Union

import numpy as np
import torch

from sdfwarp.errors import ConfigError
from sdfwarp.render.camera import Camera
from sdfwarp.render.integrator import pixel_integral, render_image
from sdfwarp.scene.params import DTYPE, as_tensor
from sdfwarp.scene.scene import expr_of
from sdfwarp.tracer.sphere import TracerOptions

MLP_BIAS = "mlp_bias"
GEOMETRY_STEP = 1e-3
BIAS_STEP = 1e-4

Selector = Union[int, str]


def _nodes(scene) -> Iterator:
    stack = [expr_of(scene)]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(node.children())


def mlp_bias_index(scene) -> Optional[int]:
    """θ index of the output bias of the first MLP node, None without one."""
    for node in _nodes(scene):
        if node.kind == "mlp":
            return node.bias_index()
    return None


def resolve_selector(scene, selector: Selector) -> int:
    """θ index of a parameter selector: an index, a block name, "name[i]" or "mlp_bias"."""
    if selector == MLP_BIAS:
        index = mlp_bias_index(scene)
        if index is None:
            raise ConfigError("Selector 'mlp_bias' needs a scene with an MLP node")
        return index
    return scene.layout.resolve(selector)


def parameter_direction(scene, param) -> Tuple[torch.Tensor, float]:
    """(θ-direction, default FD step) for a selector or an explicit direction vector."""
    size = len(scene.theta)
    if isinstance(param, (int, str)):
        index = resolve_selector(scene, param)
        direction = torch.zeros(size, dtype=DTYPE)
        direction[index] = 1.0
        return direction, BIAS_STEP if index == mlp_bias_index(scene) else GEOMETRY_STEP
    direction = torch.as_tensor(param, dtype=DTYPE).reshape(-1)
    if direction.numel() != size:
        raise ConfigError(f"Direction has {direction.numel()} entries, θ has {size}")
    return direction, GEOMETRY_STEP


def fd_oracle(
    scene,
    theta,
    camera: Camera,
    pixel: Tuple[int, int],
    param,
    h: Optional[float] = None,
    spp: int = 1024,
    seed: int = 0,
    iteration: int = 0,
    opts: Optional[TracerOptions] = None,
) -> torch.Tensor:
    """Central difference (I(θ+h·v) − I(θ−h·v)) / 2h of one pixel integral, RGB

    Both sides use the same samples, so the MC noise largely cancels.
    """
    direction, default_h = parameter_direction(scene, param)
    h = default_h if h is None else h
    if h <= 0:
        raise ConfigError("FD step must be positive")
    th = as_tensor(theta)
    row, col = pixel
    plus = pixel_integral(scene, th + h * direction, camera, row, col, spp, seed, iteration, opts)
    minus = pixel_integral(scene, th - h * direction, camera, row, col, spp, seed, iteration, opts)
    return (plus - minus) / (2.0 * h)


def fd_image(
    scene,
    theta,
    camera: Camera,
    param,
    h: Optional[float] = None,
    spp: int = 1024,
    seed: int = 0,
    opts: Optional[TracerOptions] = None,
    threads: int = 1,
    quiet: bool = False,
) -> np.ndarray:
    """Per-pixel FD gradient of the pixel integrals, shape (H, W, 3)."""
    direction, default_h = parameter_direction(scene, param)
    h = default_h if h is None else h
    if h <= 0:
        raise ConfigError("FD step must be positive")
    th = as_tensor(theta)
    plus = render_image(scene, th + h * direction, camera, spp, seed, opts, threads, quiet=quiet).image
    minus = render_image(scene, th - h * direction, camera, spp, seed, opts, threads, quiet=quiet).image
    return (plus - minus) / (2.0 * h) * camera.pixel_area
