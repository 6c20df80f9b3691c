from .check import GradcheckResult, gradcheck, pearson
from .estimator import (
    BatchSurrogate,
    Contribution,
    EstimatorConfig,
    PixelEstimate,
    PixelSurrogate,
    batch_surrogate,
    divergence_term,
    interior_term,
    pixel_boundary_term,
    pixel_gradient,
    pixel_surrogate,
)
from .image import GradientImage, gradient_image, pixel_classes
from .oracle import fd_image, fd_oracle, parameter_direction, resolve_selector

__all__ = [
    "BatchSurrogate",
    "Contribution",
    "EstimatorConfig",
    "GradcheckResult",
    "GradientImage",
    "PixelEstimate",
    "PixelSurrogate",
    "batch_surrogate",
    "divergence_term",
    "fd_image",
    "fd_oracle",
    "gradcheck",
    "gradient_image",
    "interior_term",
    "parameter_direction",
    "pearson",
    "pixel_boundary_term",
    "pixel_classes",
    "pixel_gradient",
    "pixel_surrogate",
    "resolve_selector",
]
