"""Inverse rendering: fit θ to multi-view targets with the warped gradient."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
import torch
from loguru import logger
from tqdm import tqdm

from sdfwarp.diff.adjoint import nested_adjoint
from sdfwarp.errors import ConfigError, DivergenceDetected
from sdfwarp.gradient.estimator import EstimatorConfig, batch_surrogate
from sdfwarp.optimize.adam import AdamState, adam_step
from sdfwarp.optimize.dataset import Dataset
from sdfwarp.scene.eikonal import eikonal_loss, sample_bounding_ball
from sdfwarp.scene.params import DTYPE, as_tensor
from sdfwarp.scene.serialize import save_scene
from sdfwarp.tracer.sphere import TracerOptions
from sdfwarp.warp.weights import WarpConfig

ANALYTIC_LR = 5e-2
MLP_LR = 5e-4

HISTORY_COLUMNS = ["iteration", "level", "loss", "image_loss", "eikonal", "grad_norm", "grazing", "elapsed_s"]


@dataclass(frozen=True)
class OptimConfig:
    """Optimization settings

    Attributes:
        iterations (int): Adam steps
        pixels_per_iter (int): Pixels drawn per step over all views
        interior_spp (int): Interior samples per pixel
        boundary_spp (int): Boundary samples per pixel
        lr (Optional[float]): Learning rate; None picks 5e-2 for analytic scenes and 5e-4 for MLP scenes
        betas (Tuple[float, float]): Adam moment decay
        eps (float): Adam denominator padding
        eikonal_weight (float): λ_E
        eikonal_samples (int): Points per step for the Eikonal term
        levels (int): Pyramid levels used by the schedule (coarse to fine in equal thirds for 3)
        mode (str): Estimator mode
        warp (WarpConfig): Warp settings
        tracer (TracerOptions): Sphere-tracer settings
        seed (int): Sampling seed
        checkpoint_every (int): Steps between checkpoints, 0 disables them
        checkpoint_dir (Optional[str]): Where checkpoints go
        divergence_factor (float): Loss multiple of the first loss counted as divergent
        divergence_patience (int): Consecutive divergent steps before giving up
        threads (int): Worker threads over the views of a pixel batch
    """

    iterations: int = 2000
    pixels_per_iter: int = 512
    interior_spp: int = 2
    boundary_spp: int = 4
    lr: Optional[float] = None
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    eikonal_weight: float = 0.1
    eikonal_samples: int = 1024
    levels: int = 3
    mode: str = "warped"
    warp: WarpConfig = field(default_factory=WarpConfig)
    tracer: TracerOptions = field(default_factory=TracerOptions)
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    divergence_factor: float = 10.0
    divergence_patience: int = 100
    threads: int = 1

    def __post_init__(self):
        for name in ("iterations", "pixels_per_iter", "interior_spp", "levels", "divergence_patience", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.eikonal_weight < 0:
            raise ConfigError("eikonal_weight must be non-negative")
        if self.eikonal_weight > 0 and self.eikonal_samples < 1:
            raise ConfigError("eikonal_samples must be at least 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be non-negative")

    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(
            mode=self.mode,
            interior_spp=self.interior_spp,
            boundary_spp=self.boundary_spp,
            warp=self.warp,
            seed=self.seed,
            tracer=self.tracer,
        )

    def learning_rate(self, scene) -> float:
        if self.lr is not None:
            return self.lr
        return MLP_LR if scene.has_mlp else ANALYTIC_LR

    def level_at(self, iteration: int, levels: Optional[int] = None) -> int:
        """Pyramid level for an iteration: coarsest first, one level finer per equal share of the iterations."""
        count = min(self.levels, levels or self.levels)
        share = min(count - 1, iteration * count // self.iterations)
        return count - 1 - share


@dataclass
class LossAndGrad:
    """Loss of a pixel batch and its θ-gradient

    Attributes:
        loss (float): Image loss + λ_E·Eikonal
        grad (torch.Tensor): ∂θ loss
        image_loss (float): Mean squared RGB residual per pixel
        eikonal (float): Unweighted Eikonal term
        counters (Dict[str, int]): Estimator sample counters
    """

    loss: float
    grad: torch.Tensor
    image_loss: float
    eikonal: float = 0.0
    counters: Dict[str, int] = field(default_factory=dict)


def loss_and_grad(
    scene,
    theta,
    dataset: Dataset,
    level: int,
    batch: Sequence[Tuple[int, int, int]],
    cfg: Optional[OptimConfig] = None,
    iteration: int = 0,
) -> LossAndGrad:
    """Mean ‖Î_p − target_p‖² over the batch plus λ_E·Eikonal, with its gradient

    Pixels are grouped by view; each view traces and warps its pixels as one
    batch. Every pixel surrogate is seeded with 2·(Î_p − target_p)/(B·area), so
    one reverse pass yields the whole gradient.
    """
    if not batch:
        raise ConfigError("loss_and_grad needs a non-empty pixel batch")
    cfg = cfg or OptimConfig()
    est = cfg.estimator()
    th = as_tensor(theta).detach()
    by_view: Dict[int, List[Tuple[int, int]]] = {}
    for view, row, col in batch:
        by_view.setdefault(int(view), []).append((int(row), int(col)))

    def build(item):
        view, pixels = item
        surrogate = batch_surrogate(scene, th, dataset.camera(view, level), pixels, est, iteration)
        with torch.no_grad():
            estimate = surrogate.total(th) / surrogate.area
        target = dataset.target(view, level)
        rows, cols = zip(*pixels)
        return surrogate, estimate - torch.as_tensor(target[list(rows), list(cols)], dtype=DTYPE)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        built = list(pool.map(build, sorted(by_view.items())))

    count = len(batch)
    residuals = torch.cat([r for _, r in built])
    image_loss = float((residuals**2).sum(-1).mean())
    seeds = [2.0 * r / (count * s.area) for s, r in built]

    def objective(p):
        return sum((s.total(p) * seed).sum() for (s, _), seed in zip(built, seeds))

    grad = nested_adjoint(objective, th)
    counters: Dict[str, int] = {}
    for surrogate, _ in built:
        for key, value in surrogate.counters.items():
            counters[key] = counters.get(key, 0) + value

    eikonal = 0.0
    if cfg.eikonal_weight > 0:
        points = sample_bounding_ball(scene.bounding_radius, cfg.eikonal_samples, cfg.seed, iteration)
        result = eikonal_loss(scene, th, points)
        eikonal = result.loss
        grad = grad + cfg.eikonal_weight * result.grad
    return LossAndGrad(
        loss=image_loss + cfg.eikonal_weight * eikonal, grad=grad, image_loss=image_loss, eikonal=eikonal, counters=counters
    )


@dataclass
class FitResult:
    """Outcome of an optimization run

    Attributes:
        theta (torch.Tensor): Lowest-loss parameters at the finest scheduled level
        scene: Scene carrying ``theta``
        history (pd.DataFrame): One row per iteration
        best_loss (float): Loss at ``theta``
        best_iteration (int): Iteration that produced ``theta``
        elapsed_s (Optional[float]): Wall time in seconds
        checkpoints (List[Path]): Written checkpoint files
    """

    theta: torch.Tensor
    scene: object
    history: pd.DataFrame
    best_loss: float
    best_iteration: int
    elapsed_s: Optional[float] = None
    checkpoints: List[Path] = field(default_factory=list)


def _checkpoint(scene, theta: torch.Tensor, directory: Path, name: str) -> Path:
    return save_scene(scene.with_theta(theta), directory / f"{name}.json", with_theta=True)


def fit(scene, dataset: Dataset, cfg: Optional[OptimConfig] = None, theta=None, quiet: bool = False) -> FitResult:
    """Fit the scene parameters to the dataset

    Args:
        scene: Scene template (geometry, material, initial θ)
        dataset (Dataset): Target views
        cfg (Optional[OptimConfig]): Optimization settings
        theta: Initial θ; defaults to ``scene.theta``
        quiet (bool): Suppress logs and the progress bar

    Returns:
        FitResult: Best θ and the per-iteration history

    Raises:
        DivergenceDetected: If the loss stays above ``divergence_factor`` times the
            first loss for ``divergence_patience`` consecutive iterations
    """
    cfg = cfg or OptimConfig()
    th = as_tensor(scene.theta if theta is None else theta).detach().clone()
    state = AdamState(th.numel(), cfg.learning_rate(scene), cfg.betas, cfg.eps)
    checkpoint_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    checkpoints: List[Path] = []

    start = time.time()
    rows = []
    best_loss, best_theta, best_iteration = float("inf"), th.clone(), 0
    first_loss, divergent = None, 0
    final_level = cfg.level_at(cfg.iterations - 1, dataset.levels)
    if not quiet:
        logger.info(
            f"Fitting {th.numel()} parameters on {len(dataset)} views ({cfg.mode}, lr {state.lr:g}, {cfg.iterations} iterations)"
        )

    for iteration in tqdm(range(cfg.iterations), desc="fit", disable=quiet):
        level = cfg.level_at(iteration, dataset.levels)
        batch = dataset.sample_batch(level, cfg.pixels_per_iter, cfg.seed, iteration)
        step = loss_and_grad(scene, th, dataset, level, batch, cfg, iteration)
        if not torch.isfinite(step.grad).all():
            raise DivergenceDetected(f"Non-finite gradient at iteration {iteration}")

        if level == final_level and step.loss < best_loss:
            best_loss, best_theta, best_iteration = step.loss, th.clone(), iteration
        first_loss = step.loss if first_loss is None else first_loss
        divergent = divergent + 1 if step.loss > cfg.divergence_factor * first_loss else 0
        if divergent >= cfg.divergence_patience:
            raise DivergenceDetected(
                f"Loss above {cfg.divergence_factor:g}× the initial {first_loss:.4e} for {divergent} iterations"
            )

        rows.append(
            {
                "iteration": iteration,
                "level": level,
                "loss": step.loss,
                "image_loss": step.image_loss,
                "eikonal": step.eikonal,
                "grad_norm": float(torch.linalg.norm(step.grad)),
                "grazing": step.counters.get("grazing", 0),
                "elapsed_s": time.time() - start,
            }
        )
        th = adam_step(th, step.grad, state)

        if checkpoint_dir is not None and cfg.checkpoint_every and (iteration + 1) % cfg.checkpoint_every == 0:
            checkpoints.append(_checkpoint(scene, th, checkpoint_dir, f"checkpoint_{iteration + 1:05d}"))

    elapsed = time.time() - start
    if checkpoint_dir is not None:
        checkpoints.append(_checkpoint(scene, best_theta, checkpoint_dir, "best"))
    if not quiet:
        logger.success(
            f"Fit finished in {elapsed:.1f}s ({cfg.iterations / max(elapsed, 1e-9):.2f} it/s), "
            f"best loss {best_loss:.4e} at iteration {best_iteration}"
        )
    return FitResult(
        theta=best_theta,
        scene=scene.with_theta(best_theta),
        history=pd.DataFrame(rows, columns=HISTORY_COLUMNS),
        best_loss=best_loss,
        best_iteration=best_iteration,
        elapsed_s=elapsed,
        checkpoints=checkpoints,
    )
