"""Screen-space tangents ∂u₁, ∂u₂ by forward-mode differentiation."""

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import torch
from loguru import logger

from sdfwarp.errors import BranchTangent

DTYPE = torch.float64


@dataclass
class ScreenDual:
    """A value together with its derivatives along the two screen axes

    Attributes:
        value (torch.Tensor): Primal value, any shape S
        tangents (torch.Tensor): Shape S + (2,), d/du₁ and d/du₂
    """

    value: torch.Tensor
    tangents: torch.Tensor

    @classmethod
    def constant(cls, value) -> "ScreenDual":
        value = torch.as_tensor(value, dtype=DTYPE)
        return cls(value, torch.zeros(value.shape + (2,), dtype=DTYPE))

    @classmethod
    def lift(cls, u) -> "ScreenDual":
        """The screen coordinate itself: tangents form the identity."""
        u = torch.as_tensor(u, dtype=DTYPE)
        eye = torch.eye(2, dtype=DTYPE).expand(u.shape[:-1] + (2, 2))
        return cls(u, eye.clone())

    @property
    def d1(self) -> torch.Tensor:
        return self.tangents[..., 0]

    @property
    def d2(self) -> torch.Tensor:
        return self.tangents[..., 1]


def _axis(u: torch.Tensor, axis: int) -> torch.Tensor:
    e = torch.zeros_like(u)
    e[..., axis] = 1.0
    return e


def with_screen_tangents(
    fn: Callable[[torch.Tensor], Union[torch.Tensor, Tuple[torch.Tensor, ...]]],
    u: torch.Tensor,
    ties: Optional[Callable[[torch.Tensor], int]] = None,
):
    """Evaluate ``fn`` at screen points u (shape (..., 2)) with both tangents.

    ``fn`` must treat the leading axes of u as independent samples. ``ties``
    optionally counts samples sitting on a min/max branch switch; any such
    sample raises a BranchTangent warning since its tangent is one-sided.

    Returns:
        ScreenDual, or a tuple of ScreenDual when ``fn`` returns a tuple
    """
    u = torch.as_tensor(u, dtype=DTYPE)
    value, t1 = torch.func.jvp(fn, (u,), (_axis(u, 0),))
    _, t2 = torch.func.jvp(fn, (u,), (_axis(u, 1),))
    if ties is not None:
        warn_branch_ties(int(ties(u)), "screen tangent")
    if isinstance(value, tuple):
        return tuple(ScreenDual(v, torch.stack([a, b], dim=-1)) for v, a, b in zip(value, t1, t2))
    return ScreenDual(value, torch.stack([t1, t2], dim=-1))


def warn_branch_ties(count: int, where: str) -> None:
    if count <= 0:
        return
    message = f"{count} {where} sample(s) on an exact min/max tie; active-branch tangent used"
    logger.warning(message)
    warnings.warn(message, BranchTangent, stacklevel=3)
