"""Multi-view target images with their resolution pyramids."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from loguru import logger

from sdfwarp.errors import ConfigError
from sdfwarp.render.camera import Camera, look_at
from sdfwarp.render.imageio import read_pfm, write_pfm
from sdfwarp.render.integrator import render_image
from sdfwarp.render.sampling import PIXEL_STREAM, philox

PathLike = Union[str, Path]
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def downsample(image: np.ndarray) -> np.ndarray:
    """2×2 box filter; an odd trailing row or column is dropped."""
    h, w = image.shape[0] // 2, image.shape[1] // 2
    if h == 0 or w == 0:
        raise ConfigError(f"Cannot downsample a {image.shape[0]}×{image.shape[1]} image")
    cropped = image[: 2 * h, : 2 * w]
    return cropped.reshape(h, 2, w, 2, *image.shape[2:]).mean(axis=(1, 3))


@dataclass
class View:
    """One camera and its target pyramid (level 0 = full resolution)."""

    camera: Camera
    target: np.ndarray
    pyramid: List[np.ndarray] = field(default_factory=list)

    def build(self, levels: int) -> None:
        self.pyramid = [np.asarray(self.target, dtype=np.float64)]
        for _ in range(1, levels):
            self.pyramid.append(downsample(self.pyramid[-1]))

    def at_level(self, level: int) -> Tuple[Camera, np.ndarray]:
        image = self.pyramid[level]
        return self.camera.with_film(image.shape[1], image.shape[0]), image


@dataclass
class Dataset:
    """Target images of one object seen from several cameras

    Attributes:
        views (List[View]): Cameras and targets; every camera shares one film size
        levels (int): Pyramid depth (factor 2 per level)
    """

    views: List[View]
    levels: int = 3

    def __post_init__(self):
        if not self.views:
            raise ConfigError("A dataset needs at least one view")
        if self.levels < 1:
            raise ConfigError("levels must be at least 1")
        first = self.views[0].camera
        for index, view in enumerate(self.views):
            cam = view.camera
            if (cam.kind, cam.width, cam.height, cam.extent) != (first.kind, first.width, first.height, first.extent):
                raise ConfigError(f"View {index} film differs from view 0")
            if view.target.shape[:2] != (cam.height, cam.width):
                raise ConfigError(f"View {index} target is {view.target.shape[:2]}, camera film is {(cam.height, cam.width)}")
            if (cam.height >> (self.levels - 1)) < 1 or (cam.width >> (self.levels - 1)) < 1:
                raise ConfigError(f"{cam.width}×{cam.height} film is too small for {self.levels} pyramid levels")
            view.build(self.levels)

    def __len__(self) -> int:
        return len(self.views)

    def camera(self, index: int, level: int = 0) -> Camera:
        return self.views[index].at_level(level)[0]

    def target(self, index: int, level: int = 0) -> np.ndarray:
        return self.views[index].at_level(level)[1]

    def sample_batch(self, level: int, count: int, seed: int, iteration: int) -> List[Tuple[int, int, int]]:
        """Distinct (view, row, col) triples drawn over all views at one level."""
        height, width = self.target(0, level).shape[:2]
        per_view = height * width
        total = per_view * len(self)
        picks = philox(seed, 0, iteration, PIXEL_STREAM).choice(total, size=min(count, total), replace=False)
        return [(int(p) // per_view, (int(p) % per_view) // width, int(p) % width) for p in np.sort(picks)]


def fibonacci_cameras(count: int, distance: float = 3.0, target=(0.0, 0.0, 0.0), **camera_kwargs) -> List[Camera]:
    """Cameras spread evenly over a sphere around ``target``, all looking at it."""
    if count < 1:
        raise ConfigError("count must be at least 1")
    cameras = []
    for i in range(count):
        y = 1.0 - 2.0 * (i + 0.5) / count
        radius = math.sqrt(max(0.0, 1.0 - y * y))
        phi = i * GOLDEN_ANGLE
        eye = tuple(t + distance * c for t, c in zip(target, (radius * math.cos(phi), y, radius * math.sin(phi))))
        cameras.append(look_at(eye, target, **camera_kwargs))
    return cameras


def synthetic_dataset(
    scene,
    theta=None,
    views: int = 8,
    distance: float = 3.0,
    width: int = 64,
    height: int = 64,
    spp: int = 16,
    levels: int = 3,
    seed: int = 0,
    threads: int = 1,
    quiet: bool = False,
    **camera_kwargs,
) -> Dataset:
    """Render a ground-truth scene from Fibonacci-sphere cameras."""
    theta = scene.theta if theta is None else theta
    cameras = fibonacci_cameras(views, distance, width=width, height=height, **camera_kwargs)
    rendered = [
        View(camera=cam, target=render_image(scene, theta, cam, spp, seed, threads=threads, quiet=True).image)
        for cam in cameras
    ]
    dataset = Dataset(rendered, levels)
    if not quiet:
        logger.info(f"Rendered {views} target views at {width}×{height}, {spp} spp")
    return dataset


def save_dataset(dataset: Dataset, directory: PathLike) -> Path:
    """Write ``dataset.json`` plus one PFM per view."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, view in enumerate(dataset.views):
        name = f"view_{index:03d}.pfm"
        write_pfm(directory / name, view.target)
        entries.append({"camera": view.camera.to_dict(), "image": name})
    path = directory / "dataset.json"
    path.write_text(json.dumps({"levels": dataset.levels, "views": entries}, indent=2), encoding="utf-8")
    return path


def dataset_from_dict(data: Dict, base_dir: Optional[Path] = None) -> Dataset:
    unknown = set(data) - {"levels", "views"}
    if unknown:
        raise ConfigError(f"dataset: unknown keys {sorted(unknown)}")
    views = []
    for index, entry in enumerate(data.get("views", [])):
        extra = set(entry) - {"camera", "image"}
        if extra:
            raise ConfigError(f"dataset.views[{index}]: unknown keys {sorted(extra)}")
        image_path = Path(entry["image"])
        if base_dir is not None and not image_path.is_absolute():
            image_path = base_dir / image_path
        if not image_path.is_file():
            raise ConfigError(f"dataset.views[{index}]: image not found: {image_path}")
        views.append(View(camera=Camera.from_dict(entry["camera"]), target=read_pfm(image_path)))
    return Dataset(views, int(data.get("levels", 3)))


def load_dataset(path: PathLike) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Dataset file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Dataset file {path} is not valid JSON: {e}") from None
    return dataset_from_dict(data, base_dir=path.parent)

