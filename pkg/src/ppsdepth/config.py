"""Pipeline configuration: one YAML file describing an experiment.

Schema (all sections optional unless a subcommand needs them; unknown
keys are rejected):

    camera:        {fx, fy, cx, cy, width, height}
    light:         {position: [x, y, z], direction: [x, y, z], mu}
    render:        {sigma0, gain, gamma, mu_r}
    scene:         SceneSpec fields, e.g. {kind: tube, radius: 1.0, ...}
    loss_weights:  {ssi, reg, pps_sup, pps_corr}
    refine:        RefineConfig fields; ref_depth_file points at a PFM
                   reference depth (loaded and validated at parse time)
    paths:         {output_dir}

Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .fileio import read_depth
from .geometry import CameraIntrinsics, LightSpec
from .losses import LossWeights
from .photometrics import RenderModel
from .refine import RefineConfig
from .scenes import SceneSpec

__all__ = ["PipelineConfig", "load_config"]

_SECTIONS = ("camera", "light", "render", "scene", "loss_weights", "refine", "paths")


@dataclass
class PipelineConfig:
    """Validated contents of one experiment configuration file."""

    camera: CameraIntrinsics | None = None
    light: LightSpec = LightSpec.colocated()
    render: RenderModel = RenderModel()
    scene: SceneSpec | None = None
    loss_weights: LossWeights = LossWeights()
    refine: RefineConfig = RefineConfig()
    output_dir: Path = Path(".")

    def require_camera(self) -> CameraIntrinsics:
        if self.camera is None:
            raise ValueError("this command needs a 'camera' section in the config")
        return self.camera

    def require_scene(self) -> SceneSpec:
        if self.scene is None:
            raise ValueError("this command needs a 'scene' section in the config")
        return self.scene


def _build(cls, section: dict, name: str):
    if not isinstance(section, dict):
        raise ValueError(f"config section {name!r} must be a mapping")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ValueError(f"config section {name!r}: {exc}") from exc


def load_config(path) -> PipelineConfig:
    """Parse and validate a YAML pipeline configuration."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError(f"{p}: config root must be a mapping")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ValueError(f"{p}: unknown config sections {sorted(unknown)}")

    cfg = PipelineConfig()
    if "camera" in raw:
        cfg.camera = _build(CameraIntrinsics, raw["camera"], "camera")
    if "light" in raw:
        sect = dict(raw["light"])
        sect.setdefault("position", (0.0, 0.0, 0.0))
        sect.setdefault("direction", (0.0, 0.0, 1.0))
        cfg.light = _build(LightSpec, sect, "light")
    if "render" in raw:
        cfg.render = _build(RenderModel, raw["render"], "render")
    if "scene" in raw:
        sect = dict(raw["scene"])
        for key in ("center", "albedo_rgb"):
            if key in sect:
                sect[key] = tuple(sect[key])
        cfg.scene = _build(SceneSpec, sect, "scene")
    if "loss_weights" in raw:
        cfg.loss_weights = _build(LossWeights, raw["loss_weights"], "loss_weights")
    if "refine" in raw:
        sect = dict(raw["refine"])
        ref_file = sect.pop("ref_depth_file", None)
        if ref_file is not None:
            ref_path = Path(ref_file)
            if not ref_path.is_absolute():
                ref_path = p.parent / ref_path
            if not ref_path.exists():
                raise FileNotFoundError(f"refine.ref_depth_file not found: {ref_path}")
            sect["ref_depth"] = read_depth(ref_path)
        cfg.refine = _build(RefineConfig, sect, "refine")
    if "paths" in raw:
        sect = raw["paths"]
        if not isinstance(sect, dict) or set(sect) - {"output_dir"}:
            raise ValueError(f"{p}: 'paths' supports only 'output_dir'")
        if "output_dir" in sect:
            cfg.output_dir = Path(sect["output_dir"])
    return cfg
