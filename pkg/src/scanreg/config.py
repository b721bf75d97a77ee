"""Flat dotted-key configuration files.

Lines look like `selector.epsilon = 0.1`; `#` starts a comment. Unknown keys
are rejected so typos fail fast. Values are coerced to the type of the
built-in default.
"""

from __future__ import annotations

import math
from pathlib import Path

from scanreg.association import AssocConfig
from scanreg.degeneracy import DegeneracyConfig
from scanreg.features import FeatureConfig
from scanreg.pipeline import PipelineConfig
from scanreg.residuals import NoiseModel
from scanreg.selector import SelectorConfig
from scanreg.solver import SolverConfig


class ConfigError(ValueError):
    """Malformed config file or unknown/invalid key."""


DEFAULTS: dict[str, object] = {
    "features.edge_threshold": 0.1,
    "features.planar_threshold": 0.01,
    "features.edge_per_ring": 20,
    "features.planar_per_ring": 40,
    "features.half_window": 5,
    "features.sectors": 6,
    "features.voxel_edge": 0.2,
    "features.voxel_planar": 0.4,
    "assoc.k": 5,
    "assoc.max_dist": 1.0,
    "assoc.planarity": 0.2,
    "assoc.linearity_ratio": 3.0,
    "noise.sigma": 0.02,
    "noise.loss": "huber",
    "noise.huber_delta": 0.1,
    "selector.metric": "logdet",
    "selector.epsilon": 0.1,
    "selector.t_max": 0.05,
    "selector.prior_scale": 1e-3,
    "selector.ratio": 0.2,
    "selector.prefetch": True,
    "degeneracy.lambda_th": 42.0,
    "degeneracy.low_ratio": 0.2,
    "degeneracy.high_ratio": 0.8,
    "degeneracy.interval_frames": 10,
    "degeneracy.adaptive": False,
    "solver.max_iters": 10,
    "solver.step_tol": 1e-8,
    "solver.cost_tol": 1e-9,
    "solver.lm_damping": 0.0,
    "pipeline.keyframe_translation": 0.3,
    "pipeline.keyframe_rotation_deg": 5.0,
}


def _coerce(key: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> dict:
    values = dict(DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw, DEFAULTS[key])
    return values


def load_config(path=None, overrides: dict | None = None) -> dict:
    values = parse_config_text(Path(path).read_text()) if path else dict(DEFAULTS)
    for key, val in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = val
    return values


def build_pipeline_config(values: dict, mode: str = "gf", seed: int = 0) -> PipelineConfig:
    v = values
    return PipelineConfig(
        mode=mode,
        keyframe_translation=v["pipeline.keyframe_translation"],
        keyframe_rotation=math.radians(v["pipeline.keyframe_rotation_deg"]),
        seed=seed,
        features=FeatureConfig(
            edge_threshold=v["features.edge_threshold"],
            planar_threshold=v["features.planar_threshold"],
            edge_per_ring=v["features.edge_per_ring"],
            planar_per_ring=v["features.planar_per_ring"],
            half_window=v["features.half_window"],
            sectors=v["features.sectors"],
            voxel_edge=v["features.voxel_edge"],
            voxel_planar=v["features.voxel_planar"],
        ),
        assoc=AssocConfig(
            k=v["assoc.k"],
            max_dist=v["assoc.max_dist"],
            planarity=v["assoc.planarity"],
            linearity_ratio=v["assoc.linearity_ratio"],
        ),
        noise=NoiseModel.isotropic(
            v["noise.sigma"], loss=v["noise.loss"], huber_delta=v["noise.huber_delta"],
        ),
        selector=SelectorConfig(
            ratio=v["selector.ratio"],
            epsilon=v["selector.epsilon"],
            t_max=v["selector.t_max"],
            metric=v["selector.metric"],
            prior_scale=v["selector.prior_scale"],
            prefetch=v["selector.prefetch"],
        ),
        degeneracy=DegeneracyConfig(
            lambda_th=v["degeneracy.lambda_th"],
            low_ratio=v["degeneracy.low_ratio"],
            high_ratio=v["degeneracy.high_ratio"],
            interval_frames=v["degeneracy.interval_frames"],
            adaptive=v["degeneracy.adaptive"],
        ),
        solver=SolverConfig(
            max_iterations=v["solver.max_iters"],
            step_tolerance=v["solver.step_tol"],
            cost_tolerance=v["solver.cost_tol"],
            lm_damping=v["solver.lm_damping"],
            prior_scale=v["selector.prior_scale"],
        ),
    )
