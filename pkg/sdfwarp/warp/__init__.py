from .diagnostics import (
    ContinuityReport,
    dense_warp,
    kronecker_probe,
    lemma_bound_eval,
    lemma_table,
    topk_continuity_scan,
    warp_divergence_fd,
    weights_table,
)
from .field import WarpEval, boundary_derivative_G, screen_projection, warp_at, warp_eval
from .weights import (
    ALL,
    WarpConfig,
    harmonic_weight,
    normalized,
    quadrature_weights,
    silhouette_score,
    topk_weights,
)

__all__ = [
    "ALL",
    "ContinuityReport",
    "WarpConfig",
    "WarpEval",
    "boundary_derivative_G",
    "dense_warp",
    "harmonic_weight",
    "kronecker_probe",
    "lemma_bound_eval",
    "lemma_table",
    "normalized",
    "quadrature_weights",
    "screen_projection",
    "silhouette_score",
    "topk_continuity_scan",
    "topk_weights",
    "warp_at",
    "warp_divergence_fd",
    "warp_eval",
    "weights_table",
]
