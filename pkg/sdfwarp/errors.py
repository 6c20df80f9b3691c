"""Exception hierarchy shared by every sdfwarp module.

Batch code paths (renderer, estimator, optimizer) do not raise for per-sample
degeneracies; they skip the sample and count it. The exceptions below surface
from the single-point APIs and from orchestration code.
"""


class SdfWarpError(Exception):
    """Base class for all sdfwarp errors."""


class NumericalError(SdfWarpError):
    """A scene quantity came out non-finite (e.g. a diverged MLP)."""


class DegenerateNormal(NumericalError):
    """The SDF gradient vanished (medial-axis point); the normal is undefined."""


class GrazingHit(NumericalError):
    """Ray-surface hit with |grad f . d| below the grazing threshold."""


class RankDeficient(NumericalError):
    """The screen Jacobian of a camera lost rank."""


class InsideStart(SdfWarpError):
    """A ray origin lies inside the geometry (f(origin) <= 0)."""


class DivergenceDetected(SdfWarpError):
    """The optimization loss stayed far above its initial value for too long."""


class ConfigError(SdfWarpError, ValueError):
    """Invalid or unknown configuration values."""


class BranchTangent(UserWarning):
    """A tangent was propagated through a min/max tie (non-differentiable point)."""
