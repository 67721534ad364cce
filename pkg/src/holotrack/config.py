"""Pipeline configuration: nested dataclasses with YAML (de)serialization.

Unknown keys are rejected so typos fail loudly; ``validate`` returns every
problem found rather than stopping at the first.  Defaults follow the
synthetic tracer setup: 512x512 sensor, 10 um pitch, 632 nm illumination,
fused-lasso weights 0.5/0.2 and 100 solver iterations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any

import yaml

from .optics import VolumeGeometry

__all__ = [
    "GeometrySection",
    "SolverSection",
    "SegmentationSection",
    "TrackingSection",
    "PreprocessingSection",
    "SynthesisSection",
    "PathsSection",
    "PipelineConfig",
    "load_config",
    "save_config",
    "config_to_dict",
    "config_from_dict",
    "validate_config",
]


@dataclass
class GeometrySection:
    nx: int = 512
    ny: int = 512
    nz: int = 700
    pitch: float = 10e-6
    dz: float = 10e-6
    z0: float = 5e-3
    wavelength: float = 632e-9

    def to_geometry(self) -> VolumeGeometry:
        return VolumeGeometry(
            nx=self.nx, ny=self.ny, nz=self.nz, pitch=self.pitch, dz=self.dz, z0=self.z0, wavelength=self.wavelength
        )


@dataclass
class SolverSection:
    method: str = "fista"  # "fista" | "baseline"
    lambda_l1: float = 0.5
    lambda_tv: float = 0.2
    max_iters: int = 100
    tv_inner_iters: int = 5
    step_policy: str = "backtracking"
    step_size: float | None = None
    bt_shrink: float = 0.5
    stop_tol: float = 0.0
    real_nonnegative: bool = False
    dtype: str = "float64"
    dense_plane_budget: int = 16
    baseline_threshold: float = 0.08
    baseline_min_pixels: int = 3


@dataclass
class SegmentationSection:
    rel_tol: float = 2 / 256
    min_vox: int = 5
    with_orientation: bool = False


@dataclass
class TrackingSection:
    max_disp: float = 70e-6
    min_frames: int = 10
    smoothing: str = "savitzky_golay"  # "none" | "savitzky_golay" | "tv"
    window: int = 20
    order: int = 2
    tv_weight: float = 0.0
    frame_rate: float = 1.0


@dataclass
class PreprocessingSection:
    mode: str = "invert"  # "invert" | "background" | "none"
    window: int = 151


@dataclass
class SynthesisSection:
    particles: int = 50
    diameter: float = 20e-6
    opacity: float = 1.0
    frames: int = 1
    noise_sigma: float = 0.0
    velocity: list = field(default_factory=lambda: [0.0, 0.0, 0.0])  # m/frame
    margin_planes: int = 0


@dataclass
class PathsSection:
    input: str = ""
    output: str = "out"


@dataclass
class PipelineConfig:
    geometry: GeometrySection = field(default_factory=GeometrySection)
    solver: SolverSection = field(default_factory=SolverSection)
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    tracking: TrackingSection = field(default_factory=TrackingSection)
    preprocessing: PreprocessingSection = field(default_factory=PreprocessingSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0
    workers: int = 1


_SECTIONS = {
    "geometry": GeometrySection,
    "solver": SolverSection,
    "segmentation": SegmentationSection,
    "tracking": TrackingSection,
    "preprocessing": PreprocessingSection,
    "synthesis": SynthesisSection,
    "paths": PathsSection,
}


def _section_from_dict(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    return cls(**data)


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ValueError("config root must be a mapping")
    known = set(_SECTIONS) | {"seed", "workers"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            section = data[name]
            if not isinstance(section, dict):
                raise ValueError(f"section {name!r} must be a mapping")
            kwargs[name] = _section_from_dict(cls, section, name)
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    if "workers" in data:
        kwargs["workers"] = int(data["workers"])
    return PipelineConfig(**kwargs)


def config_to_dict(cfg: PipelineConfig) -> dict:
    return asdict(cfg)


def load_config(path) -> PipelineConfig:
    with open(path) as f:
        data = yaml.safe_load(f)
    if data is None:
        data = {}
    return config_from_dict(data)


def save_config(path, cfg: PipelineConfig):
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=True)


def validate_config(cfg: PipelineConfig) -> list[str]:
    """Return every constraint violation found (empty list when valid)."""
    problems = []
    g = cfg.geometry
    if g.nx < 1 or g.ny < 1 or g.nz < 1:
        problems.append("geometry: voxel counts must be >= 1")
    if g.pitch <= 0 or g.dz <= 0 or g.wavelength <= 0:
        problems.append("geometry: pitch, dz and wavelength must be positive")
    if g.z0 < 0:
        problems.append("geometry: z0 must be nonnegative")
    s = cfg.solver
    if s.method not in ("fista", "baseline"):
        problems.append(f"solver: unknown method {s.method!r}")
    if s.lambda_l1 < 0 or s.lambda_tv < 0:
        problems.append("solver: regularization weights must be nonnegative")
    if s.max_iters < 1:
        problems.append("solver: max_iters must be >= 1")
    if s.tv_inner_iters < 1:
        problems.append("solver: tv_inner_iters must be >= 1")
    if s.step_policy not in ("backtracking", "fixed"):
        problems.append(f"solver: unknown step_policy {s.step_policy!r}")
    if s.step_size is not None and s.step_size <= 0:
        problems.append("solver: step_size must be positive")
    if not 0.0 < s.bt_shrink < 1.0:
        problems.append("solver: bt_shrink must be in (0, 1)")
    if s.stop_tol < 0:
        problems.append("solver: stop_tol must be nonnegative")
    if s.dtype not in ("float64", "float32"):
        problems.append(f"solver: dtype must be float64 or float32, got {s.dtype!r}")
    if s.dense_plane_budget < 1:
        problems.append("solver: dense_plane_budget must be >= 1")
    if not 0.0 < s.baseline_threshold <= 1.0:
        problems.append("solver: baseline_threshold must be in (0, 1]")
    if cfg.segmentation.rel_tol < 0 or cfg.segmentation.rel_tol >= 1:
        problems.append("segmentation: rel_tol must be in [0, 1)")
    if cfg.segmentation.min_vox < 0:
        problems.append("segmentation: min_vox must be nonnegative")
    t = cfg.tracking
    if t.max_disp <= 0:
        problems.append("tracking: max_disp must be positive")
    if t.min_frames < 1:
        problems.append("tracking: min_frames must be >= 1")
    if t.smoothing not in ("none", "savitzky_golay", "tv"):
        problems.append(f"tracking: unknown smoothing {t.smoothing!r}")
    if t.window < 2:
        problems.append("tracking: window must be >= 2")
    if t.order < 1:
        problems.append("tracking: order must be >= 1")
    if t.tv_weight < 0:
        problems.append("tracking: tv_weight must be nonnegative")
    if t.frame_rate <= 0:
        problems.append("tracking: frame_rate must be positive")
    p = cfg.preprocessing
    if p.mode not in ("invert", "background", "none"):
        problems.append(f"preprocessing: unknown mode {p.mode!r}")
    if p.window % 2 != 1 or p.window < 3:
        problems.append("preprocessing: window must be odd and >= 3")
    sy = cfg.synthesis
    if sy.particles < 0:
        problems.append("synthesis: particles must be nonnegative")
    if sy.diameter <= 0:
        problems.append("synthesis: diameter must be positive")
    if not 0.0 <= sy.opacity <= 1.0:
        problems.append("synthesis: opacity must be in [0, 1]")
    if sy.frames < 1:
        problems.append("synthesis: frames must be >= 1")
    if sy.noise_sigma < 0:
        problems.append("synthesis: noise_sigma must be nonnegative")
    if len(sy.velocity) != 3:
        problems.append("synthesis: velocity must have 3 components")
    if sy.margin_planes < 0:
        problems.append("synthesis: margin_planes must be nonnegative")
    if cfg.workers < 1:
        problems.append("workers must be >= 1")
    return problems
