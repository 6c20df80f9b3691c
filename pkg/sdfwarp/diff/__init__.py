from .adjoint import AdjointBuffer, dense_forward, dense_reverse, directional, nested_adjoint
from .screen import ScreenDual, warn_branch_ties, with_screen_tangents

__all__ = [
    "AdjointBuffer",
    "ScreenDual",
    "dense_forward",
    "dense_reverse",
    "directional",
    "nested_adjoint",
    "warn_branch_ties",
    "with_screen_tangents",
]
