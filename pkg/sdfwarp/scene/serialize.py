"""Scene description files (JSON) and θ blobs

Scene file layout::

    {
      "parameters": {"radius": 1.0, "center": [0, 0, 0],
                     "net": {"init": "geometric", "r0": 0.5, "seed": 0}},
      "sdf": {"type": "sphere", "center": "center", "radius": "radius"},
      "material": {"albedo": [0.8, 0.8, 0.8], "ambient": [0.05, 0.05, 0.05],
                   "light": {"direction": [0, -1, -1], "intensity": [1, 1, 1]},
                   "background": [0, 0, 0]},
      "camera": {"kind": "orthographic", "eye": [0, 0, -3], "target": [0, 0, 0],
                 "width": 64, "height": 64, "extent": [3, 3]},
      "bounding_radius": 1.5,
      "theta_file": "scene.theta"
    }

In the ``sdf`` tree a string names a parameter (``"center"`` for a whole
3-vector, ``"center[1]"`` for one component) and a number is a constant.
``theta_file`` is optional; when present its values replace the initial ones.
The blob is a little-endian uint64 count followed by that many float64 values.
"""

import json
from pathlib import Path
from typing import Dict, Optional, Union

import torch
from loguru import logger

from sdfwarp.errors import ConfigError
from sdfwarp.scene.material import Material
from sdfwarp.scene.mlp import MlpSdf, geometric_init, mlp_parameter_count
from sdfwarp.scene.params import (
    DTYPE,
    ParamLayout,
    ParamVector,
    blob_bytes,
    blob_values,
    parse_ref,
    parse_vec3,
)
from sdfwarp.scene.scene import SdfScene
from sdfwarp.scene.sdf import (
    Box,
    Complement,
    Intersection,
    Plane,
    SdfExpr,
    SmoothUnion,
    Sphere,
    Torus,
    Transform,
    Union as UnionNode,
)

PathLike = Union[str, Path]

SCENE_KEYS = {"parameters", "sdf", "material", "camera", "bounding_radius", "theta_file"}

NODE_KEYS = {
    "sphere": {"center", "radius"},
    "box": {"center", "half_size"},
    "torus": {"center", "major_radius", "minor_radius"},
    "plane": {"normal", "offset"},
    "union": {"children"},
    "intersection": {"children"},
    "smooth_union": {"children", "k"},
    "complement": {"child"},
    "transform": {"child", "translation", "rotation", "scale"},
    "mlp": {"params", "hidden", "pe_levels", "skips", "beta"},
}

MLP_DEFAULTS = {"hidden": [64, 64, 64, 64], "pe_levels": 6, "skips": [2], "beta": 100.0}


def _check_keys(data: Dict, allowed, where: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _mlp_nodes(node: Dict, found: Dict[str, Dict], where: str = "sdf") -> Dict[str, Dict]:
    if not isinstance(node, dict):
        raise ConfigError(f"{where}: expected an object")
    if node.get("type") == "mlp":
        found[node.get("params", "")] = node
    for i, child in enumerate(node.get("children", [])):
        _mlp_nodes(child, found, f"{where}.children[{i}]")
    if "child" in node:
        _mlp_nodes(node["child"], found, f"{where}.child")
    return found


def parse_node(data: Dict, layout: ParamLayout, where: str = "sdf") -> SdfExpr:
    if not isinstance(data, dict) or "type" not in data:
        raise ConfigError(f"{where}: node needs a 'type'")
    kind = data["type"]
    if kind not in NODE_KEYS:
        raise ConfigError(f"{where}: unknown node type '{kind}'")
    _check_keys(data, NODE_KEYS[kind] | {"type"}, where)

    def ref(name, default=None):
        if name not in data:
            if default is None:
                raise ConfigError(f"{where}: missing '{name}'")
            return default
        return parse_ref(layout, data[name], f"{where}.{name}")

    def vec(name, default=None):
        if name not in data:
            if default is None:
                raise ConfigError(f"{where}: missing '{name}'")
            return default
        return parse_vec3(layout, data[name], f"{where}.{name}")

    def children(count=None):
        items = data.get("children")
        if not isinstance(items, list) or not items or (count and len(items) != count):
            raise ConfigError(f"{where}: 'children' must be a list of {count or 'one or more'} nodes")
        return tuple(parse_node(c, layout, f"{where}.children[{i}]") for i, c in enumerate(items))

    if kind == "sphere":
        return Sphere(center=vec("center", (0.0, 0.0, 0.0)), radius=ref("radius"))
    if kind == "box":
        return Box(center=vec("center", (0.0, 0.0, 0.0)), half_size=vec("half_size"))
    if kind == "torus":
        return Torus(
            center=vec("center", (0.0, 0.0, 0.0)),
            major_radius=ref("major_radius"),
            minor_radius=ref("minor_radius"),
        )
    if kind == "plane":
        normal = data.get("normal")
        if not isinstance(normal, list) or len(normal) != 3:
            raise ConfigError(f"{where}.normal: expected 3 numbers")
        return Plane(normal=tuple(float(c) for c in normal), offset=ref("offset", 0.0))
    if kind == "union":
        return UnionNode(items=children())
    if kind == "intersection":
        return Intersection(items=children())
    if kind == "smooth_union":
        first, second = children(2)
        return SmoothUnion(first=first, second=second, k=ref("k"))
    if kind == "complement":
        return Complement(child=parse_node(data.get("child"), layout, f"{where}.child"))
    if kind == "transform":
        return Transform(
            child=parse_node(data.get("child"), layout, f"{where}.child"),
            translation=vec("translation", (0.0, 0.0, 0.0)),
            rotation=vec("rotation", (0.0, 0.0, 0.0)),
            scale=ref("scale", 1.0),
        )
    options = {**MLP_DEFAULTS, **{k: v for k, v in data.items() if k in MLP_DEFAULTS}}
    if "params" not in data:
        raise ConfigError(f"{where}: mlp node needs 'params'")
    return MlpSdf(
        block=layout[data["params"]],
        hidden=tuple(int(h) for h in options["hidden"]),
        pe_levels=int(options["pe_levels"]),
        skips=tuple(int(s) for s in options["skips"]),
        beta=float(options["beta"]),
    )


def scene_from_dict(data: Dict, base_dir: Optional[Path] = None) -> SdfScene:
    """Build a scene from its JSON object; ``base_dir`` resolves ``theta_file``."""
    _check_keys(data, SCENE_KEYS, "scene")
    if "sdf" not in data:
        raise ConfigError("scene: missing 'sdf'")
    parameters = data.get("parameters", {})
    _check_keys(parameters, parameters.keys(), "scene.parameters")
    mlp_nodes = _mlp_nodes(data["sdf"], {})

    layout = ParamLayout()
    initial, mlp_inits = [], {}
    for name, value in parameters.items():
        where = f"scene.parameters.{name}"
        if isinstance(value, bool):
            raise ConfigError(f"{where}: expected a number, a list or an MLP description")
        if isinstance(value, (int, float)):
            layout.allocate(name)
            initial.append(torch.tensor([float(value)], dtype=DTYPE))
        elif isinstance(value, list):
            layout.allocate(name, (len(value),))
            initial.append(torch.tensor([float(v) for v in value], dtype=DTYPE))
        elif isinstance(value, dict):
            _check_keys(value, {"init", "r0", "seed", "size"}, where)
            node = mlp_nodes.get(name)
            if node is None:
                raise ConfigError(f"{where}: no mlp node uses this parameter block")
            options = {**MLP_DEFAULTS, **node}
            size = mlp_parameter_count(options["hidden"], int(options["pe_levels"]), options["skips"])
            if "size" in value and int(value["size"]) != size:
                raise ConfigError(f"{where}: size {value['size']} does not match the network ({size})")
            layout.allocate(name, (size,))
            initial.append(torch.zeros(size, dtype=DTYPE))
            if value.get("init", "geometric") == "geometric" and "size" not in value:
                mlp_inits[name] = (int(value.get("seed", 0)), float(value.get("r0", 0.5)))
        else:
            raise ConfigError(f"{where}: expected a number, a list or an MLP description")

    values = torch.cat(initial) if initial else torch.zeros(0, dtype=DTYPE)
    theta = ParamVector(values, layout)
    sdf = parse_node(data["sdf"], layout)

    for name, (seed, r0) in mlp_inits.items():
        node = next(n for n in _walk(sdf) if isinstance(n, MlpSdf) and n.block.name == name)
        theta = geometric_init(node, seed=seed, r0=r0, theta=theta)

    if "theta_file" in data:
        blob_path = Path(data["theta_file"])
        if base_dir is not None and not blob_path.is_absolute():
            blob_path = base_dir / blob_path
        theta = theta.with_values(load_theta(blob_path, expected=layout.size))

    camera = None
    if "camera" in data:
        from sdfwarp.render.camera import Camera

        camera = Camera.from_dict(data["camera"])

    return SdfScene(
        sdf=sdf,
        theta=theta,
        material=Material.from_dict(data.get("material", {}), layout),
        bounding_radius=float(data.get("bounding_radius", 1.5)),
        camera=camera,
    )


def _walk(node: SdfExpr):
    yield node
    for child in node.children():
        yield from _walk(child)


def scene_to_dict(scene: SdfScene, theta_file: Optional[str] = None) -> Dict:
    parameters = {}
    for name, block in scene.layout.blocks.items():
        mlp = next((n for n in _walk(scene.sdf) if isinstance(n, MlpSdf) and n.block.name == name), None)
        if mlp is not None:
            parameters[name] = {"size": block.size}
        elif block.shape:
            parameters[name] = [float(v) for v in scene.theta.get(name).reshape(-1)]
        else:
            parameters[name] = float(scene.theta.get(name))
    data = {
        "parameters": parameters,
        "sdf": scene.sdf.to_dict(scene.layout),
        "material": scene.material.to_dict(scene.layout),
        "bounding_radius": scene.bounding_radius,
    }
    if scene.camera is not None:
        data["camera"] = scene.camera.to_dict()
    if theta_file is not None:
        data["theta_file"] = theta_file
    return data


def load_scene(path: PathLike) -> SdfScene:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Scene file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Scene file {path} is not valid JSON: {e}") from None
    return scene_from_dict(data, base_dir=path.parent)


def save_scene(scene: SdfScene, path: PathLike, with_theta: Optional[bool] = None) -> Path:
    """Write the scene JSON; MLP scenes (or ``with_theta=True``) also get a θ blob beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if with_theta is None:
        with_theta = scene.has_mlp
    theta_file = None
    if with_theta:
        blob = path.with_suffix(".theta")
        save_theta(scene.theta, blob)
        theta_file = blob.name
    path.write_text(json.dumps(scene_to_dict(scene, theta_file), indent=2), encoding="utf-8")
    logger.debug(f"Scene written to {path}")
    return path


def save_theta(theta, path: PathLike) -> Path:
    path = Path(path)
    values = theta.values if isinstance(theta, ParamVector) else torch.as_tensor(theta, dtype=DTYPE)
    path.write_bytes(blob_bytes(values))
    return path


def load_theta(path: PathLike, expected: Optional[int] = None) -> torch.Tensor:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Parameter blob not found: {path}")
    return blob_values(path.read_bytes(), expected)
