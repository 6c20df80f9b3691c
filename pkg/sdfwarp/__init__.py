"""sdfwarp - 可微 SDF 渲染与轮廓感知梯度工具包"""

from sdfwarp.version import __version__

from .gradient import EstimatorConfig, gradcheck, pixel_gradient  # noqa
from .optimize import OptimConfig, fit, synthetic_dataset  # noqa
from .render import Camera, render_image  # noqa
from .scene import SdfScene, load_scene, save_scene, sphere_scene, torus_scene  # noqa
from .warp import WarpConfig, warp_eval  # noqa

__all__ = ["__version__"]
