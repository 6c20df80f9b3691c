"""PFM (float32, little-endian) and PPM (8-bit, gamma 2.2) image files."""

from pathlib import Path
from typing import Union

import numpy as np

from sdfwarp.errors import ConfigError

PathLike = Union[str, Path]
GAMMA = 2.2


def _as_image(image) -> np.ndarray:
    array = np.asarray(image, dtype=np.float64)
    if array.ndim == 2:
        return array
    if array.ndim == 3 and array.shape[2] in (1, 3):
        return array[..., 0] if array.shape[2] == 1 else array
    raise ConfigError(f"Expected an (H, W) or (H, W, 3) image, got shape {array.shape}")


def write_pfm(path: PathLike, image) -> Path:
    """Rows are stored bottom-to-top as the format requires; a negative scale marks little-endian."""
    path = Path(path)
    array = _as_image(image)
    color = array.ndim == 3
    height, width = array.shape[:2]
    header = f"{'PF' if color else 'Pf'}\n{width} {height}\n-1.0\n".encode("ascii")
    data = np.flipud(array).astype("<f4").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + data)
    return path


def read_pfm(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] not in (b"PF", b"Pf"):
        raise ConfigError(f"{path} is not a PFM file")
    color = parts[0] == b"PF"
    width, height = (int(v) for v in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    channels = 3 if color else 1
    data = np.frombuffer(parts[3], dtype=dtype, count=width * height * channels)
    shape = (height, width, 3) if color else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float64)


def to_srgb8(image) -> np.ndarray:
    array = np.clip(_as_image(image), 0.0, 1.0)
    if array.ndim == 2:
        array = np.repeat(array[..., None], 3, axis=2)
    return np.round(255.0 * array ** (1.0 / GAMMA)).astype(np.uint8)


def write_ppm(path: PathLike, image) -> Path:
    path = Path(path)
    pixels = to_srgb8(image)
    height, width = pixels.shape[:2]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P6\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def read_ppm(path: PathLike) -> np.ndarray:
    """8-bit RGB pixels of a binary PPM written by ``write_ppm``."""
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise ConfigError(f"{path} is not a binary PPM file")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=width * height * 3).reshape(height, width, 3)
