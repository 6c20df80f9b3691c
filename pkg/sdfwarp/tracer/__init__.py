from .ray import Ray
from .sphere import (
    Termination,
    TracerOptions,
    Trajectory,
    attach_hit_distance,
    hit_constants,
    intersection_t_derivative,
    replay_trajectory,
    sphere_trace,
)

__all__ = [
    "Ray",
    "Termination",
    "TracerOptions",
    "Trajectory",
    "attach_hit_distance",
    "hit_constants",
    "intersection_t_derivative",
    "replay_trajectory",
    "sphere_trace",
]
