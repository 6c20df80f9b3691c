"""Run configuration: JSON files mapped onto dataclasses, then CLI overrides."""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar, Union

from sdfwarp.errors import ConfigError
from sdfwarp.tracer.sphere import TracerOptions
from sdfwarp.warp.weights import WarpConfig

T = TypeVar("T")


@dataclass
class RenderSection:
    spp: int = 16
    level: int = 0


@dataclass
class GradcheckSection:
    param: Union[int, str] = 0
    mode: str = "warped"
    interior_spp: int = 256
    boundary_spp: int = 4
    fd_spp: int = 1024
    fd_h: Optional[float] = None
    min_correlation: float = 0.95
    silhouette_tol: float = 0.10
    min_naive_ratio: float = 10.0
    level: int = 0


@dataclass
class WeightsDumpSection:
    """Rays to dump, as pixel centers or screen points; default is the middle film row."""

    pixels: List[Tuple[int, int]] = field(default_factory=list)
    u: List[Tuple[float, float]] = field(default_factory=list)


@dataclass
class LemmaSection:
    deltas: List[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    gammas: List[float] = field(default_factory=lambda: [4.0, 2.0])
    r_l: float = 1.0
    lambda_d: float = 0.1
    distances: List[float] = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    kronecker_threshold: float = 0.99
    scan_samples: int = 10_000
    scan_range: Tuple[float, float] = (1.0005, 1.3)
    min_events: int = 5
    jump_tol: float = 5.0


@dataclass
class FitSection:
    iterations: int = 2000
    pixels_per_iter: int = 512
    interior_spp: int = 2
    boundary_spp: int = 4
    lr: Optional[float] = None
    eikonal_weight: float = 0.1
    eikonal_samples: int = 1024
    levels: int = 3
    mode: str = "warped"
    checkpoint_every: int = 0
    dataset: Optional[str] = None
    ground_truth: Optional[str] = None
    views: int = 8
    width: int = 64
    height: int = 64
    target_spp: int = 16
    distance: float = 3.0


@dataclass
class RunConfig:
    """Everything a command needs, validated before it runs

    Attributes:
        scene (Optional[str]): Scene JSON path
        out (str): Output directory
        seed (int): Global sampling seed
        threads (int): Worker threads
        camera (Optional[Dict]): Camera overriding the one stored with the scene
        warp (WarpConfig): Warp settings shared by all commands
        tracer (TracerOptions): Sphere-tracer settings
    """

    scene: Optional[str] = None
    out: str = "out"
    seed: int = 0
    threads: int = 1
    camera: Optional[Dict] = None
    warp: WarpConfig = field(default_factory=WarpConfig)
    tracer: TracerOptions = field(default_factory=TracerOptions)
    render: RenderSection = field(default_factory=RenderSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)
    weights_dump: WeightsDumpSection = field(default_factory=WeightsDumpSection)
    lemma_check: LemmaSection = field(default_factory=LemmaSection)
    fit: FitSection = field(default_factory=FitSection)

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


NESTED = {
    "warp": WarpConfig,
    "tracer": TracerOptions,
    "render": RenderSection,
    "gradcheck": GradcheckSection,
    "weights_dump": WeightsDumpSection,
    "lemma_check": LemmaSection,
    "fit": FitSection,
}


def section(cls: Type[T], data: Any, where: str) -> T:
    """Build dataclass ``cls`` from a JSON object, rejecting unknown keys."""
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None


def run_config_from_dict(data: Dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: expected an object")
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    values = dict(data)
    for key, cls in NESTED.items():
        if key in values:
            values[key] = section(cls, values[key], key)
    return RunConfig(**values)


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from None
    return run_config_from_dict(data)


def _param(value: str) -> Union[int, str]:
    return int(value) if value.lstrip("-").isdigit() else value


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Flags given on the command line win over the config file."""
    top = {}
    for name in ("scene", "out", "seed", "threads"):
        value = getattr(args, name, None)
        if value is not None:
            top[name] = value

    warp = {}
    for flag, key in (("gamma", "gamma"), ("lambda_d", "lambda_d"), ("k", "k")):
        value = getattr(args, flag, None)
        if value is not None:
            warp[key] = value if key != "k" else (value if value == "all" else int(value))
    if warp:
        top["warp"] = dataclasses.replace(cfg.warp, **warp)

    render, gradcheck, fit = {}, {}, {}
    if getattr(args, "spp", None) is not None:
        render["spp"] = args.spp
        gradcheck["interior_spp"] = args.spp
    if getattr(args, "level", None) is not None:
        render["level"] = args.level
        gradcheck["level"] = args.level
    if getattr(args, "mode", None) is not None:
        gradcheck["mode"] = args.mode
        fit["mode"] = args.mode
    if getattr(args, "param", None) is not None:
        gradcheck["param"] = _param(args.param)
    if render:
        top["render"] = dataclasses.replace(cfg.render, **render)
    if gradcheck:
        top["gradcheck"] = dataclasses.replace(cfg.gradcheck, **gradcheck)
    if fit:
        top["fit"] = dataclasses.replace(cfg.fit, **fit)
    return dataclasses.replace(cfg, **top) if top else cfg
