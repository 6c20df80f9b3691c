from .eikonal import EikonalResult, eikonal_loss, sample_bounding_ball
from .material import Light, Material
from .mlp import MlpSdf, SdfNetwork, geometric_init
from .params import ParamBlock, ParamLayout, ParamVector, Slot
from .scene import (
    SdfScene,
    accumulate_param_adjoint,
    eval_sdf,
    eval_sdf_spatial_grad,
    sdf_and_spatial_grad,
    sphere_scene,
    torus_scene,
)
from .sdf import Box, Complement, Intersection, Plane, SdfExpr, SmoothUnion, Sphere, Torus, Transform, Union
from .serialize import load_scene, load_theta, save_scene, save_theta, scene_from_dict, scene_to_dict

__all__ = [
    "Box",
    "Complement",
    "EikonalResult",
    "Intersection",
    "Light",
    "Material",
    "MlpSdf",
    "ParamBlock",
    "ParamLayout",
    "ParamVector",
    "Plane",
    "SdfExpr",
    "SdfNetwork",
    "SdfScene",
    "Slot",
    "SmoothUnion",
    "Sphere",
    "Torus",
    "Transform",
    "Union",
    "accumulate_param_adjoint",
    "eikonal_loss",
    "eval_sdf",
    "eval_sdf_spatial_grad",
    "geometric_init",
    "load_scene",
    "load_theta",
    "sample_bounding_ball",
    "save_scene",
    "save_theta",
    "scene_from_dict",
    "scene_to_dict",
    "sdf_and_spatial_grad",
    "sphere_scene",
    "torus_scene",
]
