"""Comparison of estimated gradient images against the FD oracle."""

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd
from loguru import logger

from sdfwarp.gradient.estimator import EstimatorConfig
from sdfwarp.gradient.image import PIXEL_CLASSES, SILHOUETTE, GradientImage, gradient_image, pixel_classes
from sdfwarp.gradient.oracle import fd_image
from sdfwarp.render.camera import Camera

ZERO_TOL = 1e-12


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Correlation of two images; 1.0 when both are identically zero."""
    a, b = np.ravel(a), np.ravel(b)
    if np.abs(a).max(initial=0.0) <= ZERO_TOL and np.abs(b).max(initial=0.0) <= ZERO_TOL:
        return 1.0
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


@dataclass
class GradcheckResult:
    """Outcome of a gradient check

    Attributes:
        mode (str): Mode whose thresholds decide ``passed``
        table (pd.DataFrame): Per pixel class: pixel count, FD mean magnitude and errors per mode
        pixels (pd.DataFrame): Per pixel: class, FD, warped and naive values (channel mean)
        correlation (float): Pearson correlation of the checked mode against FD over all pixels
        silhouette_error (float): Silhouette MAE of the checked mode relative to the FD silhouette magnitude
        naive_ratio (Optional[float]): Naive over warped silhouette error
        naive_ratio_ok (Optional[bool]): Whether ``naive_ratio`` reaches ``min_naive_ratio``; None without a silhouette
        passed (bool): Whether the checked mode met the tolerances
        images (Dict[str, np.ndarray]): "fd", "warped" and "naive" gradient images
    """

    mode: str
    table: pd.DataFrame
    pixels: pd.DataFrame
    correlation: float
    silhouette_error: float
    naive_ratio: Optional[float]
    passed: bool
    naive_ratio_ok: Optional[bool] = None
    images: Dict[str, np.ndarray] = field(default_factory=dict)


def gradcheck(
    scene,
    theta,
    camera: Camera,
    param,
    cfg: Optional[EstimatorConfig] = None,
    fd_spp: int = 1024,
    fd_h: Optional[float] = None,
    threads: int = 1,
    min_correlation: float = 0.95,
    silhouette_tol: float = 0.10,
    min_naive_ratio: float = 10.0,
    quiet: bool = False,
) -> GradcheckResult:
    """Run warped, naive and FD gradients and score the mode of ``cfg``

    The checked mode passes when its correlation with FD exceeds
    ``min_correlation`` and its mean absolute error on silhouette pixels stays
    below ``silhouette_tol`` times the mean FD magnitude there.
    ``naive_ratio_ok`` reports separately whether the naive silhouette error is
    at least ``min_naive_ratio`` times the warped one.
    """
    cfg = cfg or EstimatorConfig()
    fd = fd_image(scene, theta, camera, param, fd_h, fd_spp, cfg.seed, cfg.tracer, threads, quiet)
    estimates: Dict[str, GradientImage] = {}
    for mode in ("warped", "naive"):
        estimates[mode] = gradient_image(
            scene, theta, camera, param, dataclasses.replace(cfg, mode=mode), threads=threads, quiet=quiet
        )
    classes = pixel_classes(scene, theta, camera, cfg.tracer)

    fd_mean = fd.mean(axis=-1)
    means = {mode: image.values.mean(axis=-1) for mode, image in estimates.items()}
    rows = []
    for name in PIXEL_CLASSES:
        mask = classes == name
        row = {"class": name, "pixels": int(mask.sum()), "fd_mean_abs": float(np.abs(fd_mean[mask]).mean()) if mask.any() else 0.0}
        for mode, values in means.items():
            row[f"{mode}_mae"] = float(np.abs(values[mask] - fd_mean[mask]).mean()) if mask.any() else 0.0
        rows.append(row)
    table = pd.DataFrame(rows)

    r, c = np.indices(classes.shape)
    pixels = pd.DataFrame(
        {
            "row": r.ravel(),
            "col": c.ravel(),
            "class": classes.ravel(),
            "fd": fd_mean.ravel(),
            "warped": means["warped"].ravel(),
            "naive": means["naive"].ravel(),
        }
    )

    silhouette = table.set_index("class").loc[SILHOUETTE]
    scale = max(silhouette["fd_mean_abs"], ZERO_TOL)
    errors = {mode: silhouette[f"{mode}_mae"] / scale for mode in means}
    correlation = pearson(means[cfg.mode], fd_mean)
    has_silhouette = silhouette["pixels"] > 0
    passed = correlation > min_correlation and (not has_silhouette or errors[cfg.mode] < silhouette_tol)
    naive_ratio = float(errors["naive"] / errors["warped"]) if has_silhouette and errors["warped"] > 0 else None
    naive_ratio_ok = None
    if has_silhouette:
        naive_ratio_ok = naive_ratio is None or naive_ratio >= min_naive_ratio

    if not quiet:
        logger.info(f"Gradcheck ({cfg.mode}): correlation {correlation:.4f}, silhouette error {errors[cfg.mode]:.2%}")
        if naive_ratio is not None:
            logger.info(f"Naive silhouette error is {naive_ratio:.1f}× the warped one")
        if naive_ratio_ok is False:
            logger.warning(f"Naive silhouette error is less than {min_naive_ratio:g}× the warped one")
        (logger.success if passed else logger.error)(f"Gradcheck {'passed' if passed else 'failed'}")
    return GradcheckResult(
        mode=cfg.mode,
        table=table,
        pixels=pixels,
        correlation=correlation,
        silhouette_error=float(errors[cfg.mode]),
        naive_ratio=naive_ratio,
        naive_ratio_ok=naive_ratio_ok,
        passed=passed,
        images={"fd": fd, "warped": estimates["warped"].values, "naive": estimates["naive"].values},
    )
