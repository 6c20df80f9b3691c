"""Adam on the flat parameter vector."""

from typing import Tuple

import torch

from sdfwarp.errors import ConfigError
from sdfwarp.scene.params import DTYPE, as_tensor


class AdamState:
    """Moments and step count of an Adam run over a θ of fixed length

    Wraps ``torch.optim.Adam`` on a single leaf tensor; the estimator supplies
    the gradient, so the optimizer never sees an autograd graph.
    """

    def __init__(self, size: int, lr: float = 5e-2, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ConfigError("Adam learning rate must be positive")
        self.size = size
        self.param = torch.zeros(size, dtype=DTYPE, requires_grad=True)
        self.optimizer = torch.optim.Adam([self.param], lr=lr, betas=betas, eps=eps)

    @property
    def steps(self) -> int:
        state = self.optimizer.state.get(self.param, {})
        step = state.get("step", 0)
        return int(step.item() if torch.is_tensor(step) else step)

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def state_dict(self) -> dict:
        return self.optimizer.state_dict()


def adam_step(theta, gradient, state: AdamState) -> torch.Tensor:
    """One bias-corrected Adam update; returns the new θ."""
    th = as_tensor(theta).detach()
    grad = torch.as_tensor(gradient, dtype=DTYPE).reshape(-1)
    if th.numel() != state.size or grad.numel() != state.size:
        raise ConfigError(f"Adam state holds {state.size} values, got θ of {th.numel()} and gradient of {grad.numel()}")
    with torch.no_grad():
        state.param.copy_(th)
    state.param.grad = grad.clone()
    state.optimizer.step()
    return state.param.detach().clone()
