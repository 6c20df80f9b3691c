from dataclasses import dataclass
from typing import Optional

import torch

from sdfwarp.errors import ConfigError

DTYPE = torch.float64


@dataclass
class Ray:
    """One ray or a batch of rays x(t) = origin + t·direction

    Attributes:
        origin (torch.Tensor): Shape (..., 3)
        direction (torch.Tensor): Shape (..., 3), unit length
        u (Optional[torch.Tensor]): Screen coordinates the rays were generated from, shape (..., 2)
    """

    origin: torch.Tensor
    direction: torch.Tensor
    u: Optional[torch.Tensor] = None

    def __post_init__(self):
        self.origin = torch.as_tensor(self.origin, dtype=DTYPE)
        self.direction = torch.as_tensor(self.direction, dtype=DTYPE)
        if self.origin.shape != self.direction.shape or self.origin.shape[-1] != 3:
            raise ConfigError(
                f"Ray origin {tuple(self.origin.shape)} and direction {tuple(self.direction.shape)} must be (..., 3)"
            )
        norms = torch.linalg.norm(self.direction, dim=-1)
        if (torch.abs(norms - 1.0) > 1e-12).any():
            raise ConfigError("Ray direction must have unit length")

    @property
    def batch_shape(self):
        return self.origin.shape[:-1]

    def flat(self) -> "Ray":
        u = None if self.u is None else self.u.reshape(-1, 2)
        return Ray(self.origin.reshape(-1, 3), self.direction.reshape(-1, 3), u)

    def at(self, t: torch.Tensor) -> torch.Tensor:
        return self.origin + t[..., None] * self.direction
