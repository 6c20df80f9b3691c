"""Silhouette score, harmonic weights, trapezoidal quadrature and top-k weights.

All functions work on (B, M) batches of padded trajectories and stay
differentiable in their real-valued inputs.
"""

from dataclasses import dataclass
from typing import Optional, Tuple, Union

import torch

from sdfwarp.errors import ConfigError

ALL = "all"


@dataclass(frozen=True)
class WarpConfig:
    """Warp settings

    Attributes:
        gamma (float): Harmonic weight exponent, must exceed 2
        lambda_d (float): Weight of |∂x f·d| in the silhouette score (per unit scene scale)
        eps_pad (float): Weight padding (per unit scene scale)
        k (Union[int, str]): Top-k size, or "all"
        eps_den (float): Below this total weight the warp falls back to zero
        scale (Optional[float]): Scene scale multiplying lambda_d and eps_pad; None uses the bounding radius
        allow_low_gamma (bool): Accept gamma ≤ 2 for diagnostics
    """

    gamma: float = 4.0
    lambda_d: float = 0.1
    eps_pad: float = 1e-6
    k: Union[int, str] = 8
    eps_den: float = 1e-12
    scale: Optional[float] = None
    allow_low_gamma: bool = False

    def __post_init__(self):
        if self.gamma <= 2 and not self.allow_low_gamma:
            raise ConfigError(f"gamma must be > 2 for the warp to be boundary consistent, got {self.gamma}")
        if self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.lambda_d <= 0:
            raise ConfigError("lambda_d must be positive")
        if self.eps_pad <= 0:
            raise ConfigError("eps_pad must be positive")
        if self.k != ALL and (not isinstance(self.k, int) or self.k < 2):
            raise ConfigError(f"k must be an integer ≥ 2 or 'all', got {self.k!r}")
        if self.scale is not None and self.scale <= 0:
            raise ConfigError("scale must be positive")

    def scaled(self, scene_scale: float) -> Tuple[float, float]:
        """(λ_d, ε_pad) in world units."""
        s = self.scale if self.scale is not None else scene_scale
        return self.lambda_d * s, self.eps_pad * s


def silhouette_score(f, grad, d, lambda_d: float):
    """S = |f| + λ_d·|∂x f·d|; zero exactly on silhouette points."""
    f = torch.as_tensor(f, dtype=torch.float64)
    gd = (torch.as_tensor(grad, dtype=torch.float64) * torch.as_tensor(d, dtype=torch.float64)).sum(-1)
    return torch.abs(f) + lambda_d * torch.abs(gd)


def harmonic_weight(score, gamma: float, eps_pad: float):
    return (torch.as_tensor(score, dtype=torch.float64) + eps_pad) ** (-gamma)


def quadrature_weights(t: torch.Tensor, w: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """w^q_i = w_i·(t_{i+1} − t_{i−1})/2 with one-sided half intervals at both ends

    ``t`` must be padded by repeating the last valid entry; padding gets weight 0.
    """
    t = torch.as_tensor(t, dtype=torch.float64)
    w = torch.as_tensor(w, dtype=torch.float64)
    prev = torch.cat([t[..., :1], t[..., :-1]], dim=-1)
    nxt = torch.cat([t[..., 1:], t[..., -1:]], dim=-1)
    wq = w * (nxt - prev) / 2.0
    if valid is not None:
        wq = torch.where(valid, wq, torch.zeros_like(wq))
    return wq


def topk_weights(
    wq: torch.Tensor, k: Union[int, str], valid: Optional[torch.Tensor] = None
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Top-k weights w̄ and the descending order of the trajectory points

    With k points or more, w̄ = w^q − (k-th largest w^q) on the k largest and 0
    elsewhere, so at most k−1 entries are non-zero. With fewer than k points (or
    k = "all") w^q is returned unchanged. Ties go to the smaller index.

    Returns:
        Tuple[torch.Tensor, torch.Tensor]: w̄ of the same shape as ``wq`` and the
        sort order (indices of points by decreasing w^q)
    """
    wq = torch.as_tensor(wq, dtype=torch.float64)
    if valid is None:
        valid = torch.ones(wq.shape, dtype=torch.bool)
    ranked = torch.where(valid, wq, torch.full_like(wq, -1.0))
    _, order = torch.sort(ranked, dim=-1, descending=True, stable=True)
    if k == ALL:
        return wq, order
    width = wq.shape[-1]
    count = valid.sum(-1)
    if k > width:
        return wq, order
    kth_index = order[..., k - 1 : k]
    kth = torch.gather(wq, -1, kth_index)
    rank = torch.argsort(order, dim=-1)
    selected = (rank < k) & valid
    shifted = torch.where(selected, wq - kth, torch.zeros_like(wq))
    enough = (count >= k)[..., None]
    return torch.where(enough, shifted, wq), order


def normalized(wk: torch.Tensor, eps_den: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """(ω̄, denominator); rows whose total weight is below eps_den become all-zero."""
    total = wk.sum(-1, keepdim=True)
    ok = total >= eps_den
    safe = torch.where(ok, total, torch.ones_like(total))
    return torch.where(ok, wk / safe, torch.zeros_like(wk)), total[..., 0]
