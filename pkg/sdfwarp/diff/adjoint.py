"""Parameter adjoints: reverse mode over θ, plus dense forward paths for small N."""

from dataclasses import dataclass, field
from typing import Callable, Iterable

import torch

from sdfwarp.errors import ConfigError, NumericalError

DTYPE = torch.float64


@dataclass
class AdjointBuffer:
    """Caller-owned θ-gradient accumulator; workers keep their own and merge by addition."""

    size: int
    values: torch.Tensor = field(default=None)

    def __post_init__(self):
        if self.values is None:
            self.values = torch.zeros(self.size, dtype=DTYPE)
        elif self.values.numel() != self.size:
            raise ConfigError(f"Adjoint buffer holds {self.values.numel()} values, expected {self.size}")

    def __len__(self) -> int:
        return self.size

    def add(self, grad: torch.Tensor, seed: float = 1.0) -> None:
        grad = grad.detach().reshape(-1)
        if grad.numel() != self.size:
            raise ConfigError(f"Gradient of length {grad.numel()} added to buffer of length {self.size}")
        self.values += seed * grad

    def merge(self, other: "AdjointBuffer") -> "AdjointBuffer":
        self.add(other.values)
        return self

    @classmethod
    def merged(cls, size: int, buffers: Iterable["AdjointBuffer"]) -> "AdjointBuffer":
        total = cls(size)
        for buffer in buffers:
            total.merge(buffer)
        return total


def nested_adjoint(expr: Callable[[torch.Tensor], torch.Tensor], theta: torch.Tensor) -> torch.Tensor:
    """∂θ of a scalar expression, including θ-dependence carried by screen tangents.

    ``expr`` may call ``with_screen_tangents`` internally; reverse mode over θ is
    applied outermost so the tangent components are differentiated as well.
    """

    def scalar(th):
        value = expr(th)
        if value.numel() != 1:
            raise ConfigError(f"nested_adjoint needs a scalar expression, got shape {tuple(value.shape)}")
        return value.reshape(())

    grad = torch.func.grad(scalar)(theta)
    if not torch.isfinite(grad).all():
        raise NumericalError("Adjoint pass produced non-finite values")
    return grad


def directional(expr: Callable[[torch.Tensor], torch.Tensor], theta: torch.Tensor, direction: torch.Tensor):
    """(expr(θ), ∂θ expr · v) in one forward pass."""
    return torch.func.jvp(expr, (theta,), (direction.to(theta.dtype),))


def dense_forward(expr: Callable[[torch.Tensor], torch.Tensor], theta: torch.Tensor) -> torch.Tensor:
    """Full Jacobian by forward mode; intended for analytic scenes with small N."""
    return torch.func.jacfwd(expr)(theta)


def dense_reverse(expr: Callable[[torch.Tensor], torch.Tensor], theta: torch.Tensor) -> torch.Tensor:
    return torch.func.jacrev(expr)(theta)
