"""Command-line entry point

Subcommands: render, gradcheck, weights-dump, lemma-check, fit. Every run writes
``summary.json`` into the output directory and exits with 0 (success),
1 (tolerance failure), 2 (usage or configuration error) or 3 (numerical error).
"""

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
from loguru import logger

from sdfwarp.config import RunConfig, apply_overrides, load_config
from sdfwarp.errors import ConfigError, SdfWarpError
from sdfwarp.gradient.check import gradcheck
from sdfwarp.gradient.estimator import EstimatorConfig
from sdfwarp.gradient.oracle import parameter_direction
from sdfwarp.optimize.dataset import load_dataset, synthetic_dataset
from sdfwarp.optimize.fit import OptimConfig, fit
from sdfwarp.render.camera import Camera
from sdfwarp.render.imageio import write_pfm, write_ppm
from sdfwarp.render.integrator import render_image
from sdfwarp.scene.material import Material
from sdfwarp.scene.scene import sphere_scene
from sdfwarp.scene.serialize import load_scene, save_scene
from sdfwarp.version import __version__
from sdfwarp.warp.diagnostics import kronecker_probe, lemma_table, topk_continuity_scan, weights_table

EXIT_OK, EXIT_TOLERANCE, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


@dataclass
class RunResult:
    """Outcome of one CLI command

    Attributes:
        command (str): Subcommand name
        success (bool): Whether the command met its tolerances
        exit_code (int): Process exit status
        elapsed_s (Optional[float]): Wall time in seconds
        outputs (List[str]): Files written
        metrics (Dict): Machine-readable results
        error_message (Optional[str]): Error description if the command failed
    """

    command: str
    success: bool = False
    exit_code: int = EXIT_OK
    elapsed_s: Optional[float] = None
    outputs: List[str] = field(default_factory=list)
    metrics: Dict = field(default_factory=dict)
    error_message: Optional[str] = None


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else ("WARNING" if quiet else "INFO"))


def _scene(cfg: RunConfig):
    if not cfg.scene:
        raise ConfigError("No scene given (--scene or 'scene' in the config)")
    return load_scene(cfg.scene)


def _camera(cfg: RunConfig, scene, level: int = 0) -> Camera:
    if cfg.camera is not None:
        camera = Camera.from_dict(cfg.camera)
    elif scene.camera is not None:
        camera = scene.camera
    else:
        camera = Camera()
    if level:
        camera = camera.with_film(max(1, camera.width >> level), max(1, camera.height >> level))
    return camera


def cmd_render(cfg: RunConfig, result: RunResult, quiet: bool) -> None:
    scene = _scene(cfg)
    camera = _camera(cfg, scene, cfg.render.level)
    rendered = render_image(scene, scene.theta, camera, cfg.render.spp, cfg.seed, cfg.tracer, cfg.threads, quiet=quiet)
    pfm = write_pfm(cfg.out_dir / "image.pfm", rendered.image)
    ppm = write_ppm(cfg.out_dir / "image.ppm", rendered.image)
    result.outputs += [str(pfm), str(ppm)]
    result.metrics.update(
        {"width": camera.width, "height": camera.height, "spp": rendered.spp, "rays_per_s": rendered.rays_per_s, **rendered.counters}
    )
    result.success = True
    if not quiet:
        logger.success(f"Image written to {pfm} and {ppm}")


def cmd_gradcheck(cfg: RunConfig, result: RunResult, quiet: bool) -> None:
    scene = _scene(cfg)
    section = cfg.gradcheck
    camera = _camera(cfg, scene, section.level)
    est = EstimatorConfig(
        mode=section.mode,
        interior_spp=section.interior_spp,
        boundary_spp=section.boundary_spp,
        warp=cfg.warp,
        seed=cfg.seed,
        tracer=cfg.tracer,
    )
    check = gradcheck(
        scene,
        scene.theta,
        camera,
        section.param,
        est,
        fd_spp=section.fd_spp,
        fd_h=section.fd_h,
        threads=cfg.threads,
        min_correlation=section.min_correlation,
        silhouette_tol=section.silhouette_tol,
        min_naive_ratio=section.min_naive_ratio,
        quiet=quiet,
    )
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    check.table.to_csv(out / "gradcheck.csv", index=False)
    check.pixels.to_csv(out / "gradcheck_pixels.csv", index=False)
    result.outputs += [str(out / "gradcheck.csv"), str(out / "gradcheck_pixels.csv")]
    for name, image in check.images.items():
        result.outputs.append(str(write_pfm(out / f"gradient_{name}.pfm", image)))
    result.metrics.update(
        {
            "mode": check.mode,
            "correlation": check.correlation,
            "silhouette_error": check.silhouette_error,
            "naive_ratio": check.naive_ratio,
            "naive_ratio_ok": check.naive_ratio_ok,
            "classes": check.table.to_dict(orient="records"),
        }
    )
    result.success = check.passed
    if not check.passed:
        result.error_message = f"{check.mode} gradient outside tolerance"


def _dump_points(cfg: RunConfig, camera: Camera) -> torch.Tensor:
    section = cfg.weights_dump
    if section.u:
        return torch.tensor(section.u, dtype=torch.float64)
    pixels = section.pixels or [(camera.height // 2, c) for c in range(camera.width)]
    return torch.tensor([camera.pixel_center(r, c) for r, c in pixels], dtype=torch.float64)


def cmd_weights_dump(cfg: RunConfig, result: RunResult, quiet: bool) -> None:
    scene = _scene(cfg)
    camera = _camera(cfg, scene)
    table = weights_table(scene, scene.theta, camera, _dump_points(cfg, camera), cfg.warp, cfg.tracer)
    path = cfg.out_dir / "weights.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False)
    result.outputs.append(str(path))
    result.metrics.update({"rays": int(table["ray_id"].nunique()) if len(table) else 0, "points": len(table)})
    result.success = True
    if not quiet:
        logger.success(f"{len(table)} trajectory points written to {path}")


def cmd_lemma_check(cfg: RunConfig, result: RunResult, quiet: bool) -> None:
    """Weight bound table, Kronecker probe and top-k scan on a unit sphere seen orthographically."""
    section = cfg.lemma_check
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    bounds = lemma_table(section.deltas, section.r_l, section.lambda_d, section.gammas)
    bounds.to_csv(out / "lemma_bounds.csv", index=False)
    checks = {}
    for gamma, rows in bounds.groupby("gamma"):
        values = rows.sort_values("delta", ascending=False)["bound"].to_numpy()
        if gamma > 2:
            checks[f"bound_diverges_gamma_{gamma:g}"] = bool(np.all(np.diff(values) > 0))
        elif gamma == 2:
            limit = section.r_l / (2.0 * section.lambda_d**2)
            checks[f"bound_converges_gamma_{gamma:g}"] = bool(abs(values[-1] - limit) < 1e-2 * limit)

    scene = sphere_scene(1.0, material=Material.flat((1.0, 1.0, 1.0)))
    camera = Camera()
    footprint = camera.pixel_size[0]
    probes = {}
    for gamma in section.gammas:
        warp = dataclasses.replace(cfg.warp, gamma=gamma, allow_low_gamma=gamma <= 2)
        u = torch.tensor([[1.0 + d * footprint, 0.0] for d in section.distances], dtype=torch.float64)
        probes[f"{gamma:g}"] = [float(v) for v in kronecker_probe(scene, scene.theta, camera, u, warp, cfg.tracer)]
    kronecker = {}
    for gamma, values in probes.items():
        kronecker[gamma] = {
            "max_weight": values,
            "reaches_threshold": values[-1] >= section.kronecker_threshold,
            "monotonic": bool(np.all(np.diff(values) >= 0)),
        }
        if not quiet and not kronecker[gamma]["reaches_threshold"]:
            logger.warning(f"γ={gamma}: max normalized weight {values[-1]:.3f} below {section.kronecker_threshold}")
        if not quiet and not kronecker[gamma]["monotonic"]:
            logger.warning(f"γ={gamma}: max normalized weight is not monotone in the distance to the silhouette")
    if "4" in probes and "2" in probes:
        checks["kronecker_gamma_4_above_gamma_2"] = probes["4"][-1] > probes["2"][-1]

    if cfg.warp.k == "all":
        scan_metrics = {"skipped": "k=all has no top-k set"}
    else:
        lo, hi = section.scan_range
        direction, _ = parameter_direction(scene, "radius")
        scan = topk_continuity_scan(
            scene, scene.theta, camera, (lo, 0.0), (hi, 0.0), direction, cfg.warp, section.scan_samples, opts=cfg.tracer, quiet=quiet
        )
        scan.events.to_csv(out / "topk_events.csv", index=False)
        result.outputs.append(str(out / "topk_events.csv"))
        checks["topk_swaps_zero_weight"] = scan.max_swapped_ratio < 1e-9
        checks["topk_continuous"] = scan.passed(jump_tol=section.jump_tol, min_events=section.min_events)
        scan_metrics = {
            "events": len(scan.matched),
            "step_change_events": len(scan.step_changes),
            "max_swapped_ratio": scan.max_swapped_ratio,
            "max_jump_ratio": scan.max_jump_ratio,
            "max_step_change_jump_ratio": scan.max_step_change_jump_ratio,
        }

    result.outputs.append(str(out / "lemma_bounds.csv"))
    result.metrics.update({"checks": checks, "kronecker": kronecker, "topk_scan": scan_metrics})
    result.success = all(checks.values())
    if not result.success:
        result.error_message = "Failed checks: " + ", ".join(k for k, ok in checks.items() if not ok)


def cmd_fit(cfg: RunConfig, result: RunResult, quiet: bool) -> None:
    scene = _scene(cfg)
    section = cfg.fit
    if section.dataset:
        dataset = load_dataset(section.dataset)
    elif section.ground_truth:
        truth = load_scene(section.ground_truth)
        dataset = synthetic_dataset(
            truth,
            views=section.views,
            distance=section.distance,
            width=section.width,
            height=section.height,
            spp=section.target_spp,
            levels=section.levels,
            seed=cfg.seed,
            threads=cfg.threads,
            quiet=quiet,
        )
    else:
        raise ConfigError("fit needs 'fit.dataset' or 'fit.ground_truth'")

    optim = OptimConfig(
        iterations=section.iterations,
        pixels_per_iter=section.pixels_per_iter,
        interior_spp=section.interior_spp,
        boundary_spp=section.boundary_spp,
        lr=section.lr,
        eikonal_weight=section.eikonal_weight,
        eikonal_samples=section.eikonal_samples,
        levels=section.levels,
        mode=section.mode,
        warp=cfg.warp,
        tracer=cfg.tracer,
        seed=cfg.seed,
        checkpoint_every=section.checkpoint_every,
        checkpoint_dir=str(cfg.out_dir / "checkpoints"),
        threads=cfg.threads,
    )
    fitted = fit(scene, dataset, optim, quiet=quiet)
    out = cfg.out_dir
    fitted.history.to_csv(out / "history.csv", index=False)
    final = save_scene(fitted.scene, out / "fitted.json", with_theta=True)
    result.outputs += [str(out / "history.csv"), str(final)] + [str(p) for p in fitted.checkpoints]
    result.metrics.update(
        {"best_loss": fitted.best_loss, "best_iteration": fitted.best_iteration, "iterations": len(fitted.history)}
    )
    result.success = True


COMMANDS: Dict[str, Callable[[RunConfig, RunResult, bool], None]] = {
    "render": cmd_render,
    "gradcheck": cmd_gradcheck,
    "weights-dump": cmd_weights_dump,
    "lemma-check": cmd_lemma_check,
    "fit": cmd_fit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdfwarp", description="Differentiable SDF rendering with silhouette-aware gradients")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scene", help="Scene JSON file")
    common.add_argument("--config", help="Run configuration JSON file")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--seed", type=int, help="Sampling seed")
    common.add_argument("--threads", type=int, help="Worker threads (1 = serial reference)")
    common.add_argument("--mode", choices=["warped", "naive"], help="Gradient estimator mode")
    common.add_argument("--param", help="Parameter selector: index, block name, name[i] or mlp_bias")
    common.add_argument("--gamma", type=float, help="Harmonic weight exponent")
    common.add_argument("--lambda-d", dest="lambda_d", type=float, help="Silhouette score weight of |∂x f·d|")
    common.add_argument("--k", help="Top-k size or 'all'")
    common.add_argument("--spp", type=int, help="Interior samples per pixel")
    common.add_argument("--level", type=int, help="Pyramid level (film downscaled by 2^level)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="Warnings and errors only, no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def run(argv: Optional[List[str]] = None) -> RunResult:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    result = RunResult(command=args.command)
    start = time.time()
    cfg: Optional[RunConfig] = None
    try:
        cfg = apply_overrides(load_config(args.config), args)
        if cfg.threads == 1:
            torch.set_num_threads(1)
        COMMANDS[args.command](cfg, result, args.quiet)
        result.exit_code = EXIT_OK if result.success else EXIT_TOLERANCE
    except ConfigError as e:
        result.error_message = f"Configuration error: {e}"
        result.exit_code = EXIT_CONFIG
    except SdfWarpError as e:
        result.error_message = f"{type(e).__name__}: {e}"
        result.exit_code = EXIT_NUMERICAL
    result.elapsed_s = time.time() - start
    if result.error_message:
        logger.error(result.error_message)

    out = Path(cfg.out if cfg is not None else (args.out or "out"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(dataclasses.asdict(result), indent=2, default=str), encoding="utf-8")
    return result


def main(argv: Optional[List[str]] = None) -> int:
    return run(argv).exit_code


if __name__ == "__main__":
    sys.exit(main())
