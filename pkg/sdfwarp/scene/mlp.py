"""Small neural SDF evaluated on a slice of the flat parameter vector.

The network is an ordinary ``torch.nn.Module``; its weights are never stored on
the module for rendering purposes. ``MlpSdf.evaluate`` rebuilds the parameter
dictionary as views into θ and runs ``torch.func.functional_call``, so the MLP
is differentiated exactly like every analytic node.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from sdfwarp.errors import ConfigError
from sdfwarp.scene.params import DTYPE, ParamBlock, ParamLayout, ParamVector
from sdfwarp.scene.sdf import SdfExpr

FIT_POINTS = 4096
FIT_RIDGE = 1e-4


class HarmonicEmbedding(nn.Module):
    """[x, sin(2^k x), cos(2^k x)] for k = 0..levels-1."""

    def __init__(self, levels: int = 6):
        super().__init__()
        self.levels = levels
        self.register_buffer("frequencies", 2.0 ** torch.arange(levels, dtype=DTYPE), persistent=False)

    @property
    def output_dim(self) -> int:
        return 3 + 6 * self.levels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.levels == 0:
            return x
        scaled = (x[..., None] * self.frequencies).reshape(*x.shape[:-1], -1)
        return torch.cat([x, torch.sin(scaled), torch.cos(scaled)], dim=-1)


class SdfNetwork(nn.Module):
    """MLP with an input skip connection and softplus activations."""

    def __init__(
        self,
        hidden: Sequence[int] = (64, 64, 64, 64),
        pe_levels: int = 6,
        skips: Sequence[int] = (2,),
        beta: float = 100.0,
    ):
        super().__init__()
        self.embed = HarmonicEmbedding(pe_levels)
        self.skips = tuple(skips)
        self.beta = beta
        d_in = self.embed.output_dim
        dims = [d_in, *hidden, 1]
        layers = []
        for index in range(len(dims) - 1):
            out_dim = dims[index + 1]
            if index + 1 in self.skips:
                out_dim -= d_in
                if out_dim <= 0:
                    raise ConfigError(f"Hidden width {dims[index + 1]} too small for a skip of {d_in} features")
            layers.append(nn.Linear(dims[index], out_dim, dtype=DTYPE))
        self.layers = nn.ModuleList(layers)

    def forward(self, x: torch.Tensor, features: bool = False) -> torch.Tensor:
        """SDF values, or with ``features`` the (..., in) input of the output layer."""
        encoded = self.embed(x)
        h = encoded
        last = len(self.layers) - 1
        for index, layer in enumerate(self.layers):
            if index in self.skips:
                h = torch.cat([h, encoded], dim=-1) / math.sqrt(2.0)
            if features and index == last:
                return h
            h = layer(h)
            if index < last:
                h = F.softplus(h, beta=self.beta)
        return h[..., 0]


@dataclass(frozen=True, eq=False)
class MlpSdf(SdfExpr):
    """Neural SDF node whose weights occupy ``block`` of θ

    Attributes:
        block (ParamBlock): Contiguous slice of θ holding every weight and bias
        hidden (Tuple[int, ...]): Hidden layer widths
        pe_levels (int): Positional encoding levels
        skips (Tuple[int, ...]): Layers receiving the encoded input again
        beta (float): Softplus sharpness
    """

    block: ParamBlock
    hidden: Tuple[int, ...] = (64, 64, 64, 64)
    pe_levels: int = 6
    skips: Tuple[int, ...] = (2,)
    beta: float = 100.0
    network: SdfNetwork = field(init=False, repr=False, compare=False)

    kind = "mlp"

    def __post_init__(self):
        network = SdfNetwork(self.hidden, self.pe_levels, self.skips, self.beta)
        object.__setattr__(self, "network", network)
        if self.block.size != self.parameter_count():
            raise ConfigError(
                f"MLP block '{self.block.name}' holds {self.block.size} values, network needs {self.parameter_count()}"
            )

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.network.parameters())

    def parameter_shapes(self) -> List[Tuple[str, torch.Size]]:
        return [(name, p.shape) for name, p in self.network.named_parameters()]

    def unflatten(self, theta: torch.Tensor) -> Dict[str, torch.Tensor]:
        flat = theta[self.block.offset : self.block.offset + self.block.size]
        params, cursor = {}, 0
        for name, shape in self.parameter_shapes():
            count = math.prod(shape)
            params[name] = flat[cursor : cursor + count].reshape(shape)
            cursor += count
        return params

    def evaluate(self, x, theta):
        return torch.func.functional_call(self.network, self.unflatten(theta), (x,))

    def own_slots(self):
        return list(range(self.block.offset, self.block.offset + self.block.size))

    def named_offsets(self) -> Dict[str, Tuple[int, torch.Size]]:
        """Absolute θ offset of every network tensor."""
        offsets, cursor = {}, self.block.offset
        for name, shape in self.parameter_shapes():
            offsets[name] = (cursor, shape)
            cursor += math.prod(shape)
        return offsets

    def pe_weight_indices(self) -> List[int]:
        """θ indices of every weight that multiplies a positional-encoding feature."""
        n_pe = self.network.embed.output_dim - 3
        if n_pe == 0:
            return []
        found = []
        offsets = self.named_offsets()
        for index in range(len(self.network.layers)):
            if index != 0 and index not in self.skips:
                continue
            start, shape = offsets[f"layers.{index}.weight"]
            rows, cols = shape
            first_col = 3 if index == 0 else cols - n_pe
            for r in range(rows):
                found.extend(start + r * cols + c for c in range(first_col, cols))
        return found

    def bias_index(self) -> int:
        """θ index of the output bias (shifts the whole level set)."""
        start, _ = self.named_offsets()[f"layers.{len(self.network.layers) - 1}.bias"]
        return start

    def to_dict(self, layout: ParamLayout):
        return {
            "type": self.kind,
            "params": self.block.name,
            "hidden": list(self.hidden),
            "pe_levels": self.pe_levels,
            "skips": list(self.skips),
            "beta": self.beta,
        }


def mlp_parameter_count(hidden: Sequence[int], pe_levels: int, skips: Sequence[int]) -> int:
    return sum(p.numel() for p in SdfNetwork(tuple(hidden), pe_levels, tuple(skips)).parameters())


def geometric_init(
    node: MlpSdf, seed: int, r0: float, theta: Optional[ParamVector] = None
) -> ParamVector:
    """Sphere-like initialization f(x) ≈ |x| − r0 (geometric network initialization)

    Hidden weights ~ N(0, √2/√out) with zero biases, every weight reading a
    positional-encoding feature set to exactly 0, and the last layer
    ~ N(√π/√in, 1e-4) with bias −r0. With these hidden layers fixed, the output
    layer is then refit by ridge least squares to |x| − r0 on ``FIT_POINTS``
    points of the ball of radius 2.5·max(1, r0), shrunk toward its random draw.

    Args:
        node (MlpSdf): Network node to initialize
        seed (int): Seed of the torch generator
        r0 (float): Radius of the initial sphere, must be positive
        theta (Optional[ParamVector]): Vector to update; the other slots are kept

    Returns:
        ParamVector: Copy of ``theta`` with the network block filled in
    """
    if r0 <= 0:
        raise ConfigError(f"geometric_init needs r0 > 0, got {r0}")
    if theta is None:
        layout = ParamLayout()
        layout.blocks[node.block.name] = node.block
        layout.size = node.block.offset + node.block.size
        theta = ParamVector(torch.zeros(layout.size, dtype=DTYPE), layout)

    generator = torch.Generator().manual_seed(int(seed))
    values = theta.values.clone()
    n_pe = node.network.embed.output_dim - 3
    last = len(node.network.layers) - 1
    offsets = node.named_offsets()

    for index, layer in enumerate(node.network.layers):
        out_dim, in_dim = layer.weight.shape
        if index == last:
            weight = torch.normal(
                math.sqrt(math.pi) / math.sqrt(in_dim), 1e-4, (out_dim, in_dim), generator=generator, dtype=DTYPE
            )
            bias = torch.full((out_dim,), -float(r0), dtype=DTYPE)
        else:
            weight = torch.normal(0.0, math.sqrt(2.0) / math.sqrt(out_dim), (out_dim, in_dim), generator=generator, dtype=DTYPE)
            bias = torch.zeros(out_dim, dtype=DTYPE)
            if n_pe and index == 0:
                weight[:, 3:] = 0.0
            elif n_pe and index in node.skips:
                weight[:, -n_pe:] = 0.0
        w_start, _ = offsets[f"layers.{index}.weight"]
        b_start, _ = offsets[f"layers.{index}.bias"]
        values[w_start : w_start + weight.numel()] = weight.reshape(-1)
        values[b_start : b_start + bias.numel()] = bias

    radius = 2.5 * max(1.0, float(r0))
    direction = torch.randn(FIT_POINTS, 3, generator=generator, dtype=DTYPE)
    direction = direction / torch.linalg.norm(direction, dim=-1, keepdim=True)
    x = direction * radius * torch.rand(FIT_POINTS, 1, generator=generator, dtype=DTYPE) ** (1.0 / 3.0)
    params = node.unflatten(values)
    with torch.no_grad():
        h = torch.func.functional_call(node.network, params, (x,), {"features": True})
    design = torch.cat([h, torch.ones(FIT_POINTS, 1, dtype=DTYPE)], dim=-1)
    target = torch.linalg.norm(x, dim=-1) - float(r0)
    w_start, (_, in_dim) = offsets[f"layers.{last}.weight"]
    prior = torch.cat([values[w_start : w_start + in_dim], torch.tensor([-float(r0)], dtype=DTYPE)])
    ridge = torch.full((in_dim + 1,), FIT_RIDGE * FIT_POINTS, dtype=DTYPE)
    ridge[-1] = 0.0  # bias is not shrunk
    lhs = design.T @ design + torch.diag(ridge)
    solution = torch.linalg.solve(lhs, design.T @ target + ridge * prior)
    b_start, _ = offsets[f"layers.{last}.bias"]
    values[w_start : w_start + in_dim] = solution[:-1]
    values[b_start] = solution[-1]
    return theta.with_values(values)
