"""Scan-to-map frame loop: predict, extract, select, solve, map update.

Each frame is processed against the accumulated keyframe map. The pose is
predicted by constant velocity, features are extracted and (optionally)
degeneracy-checked, a subset is selected per the configured mode, and the
pose is refined by the IRLS solver. Features of keyframes are inserted into
the map in the world frame. Selection sees the predicted pose, which stays
fixed during selection.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from scanreg.association import AssocConfig, FeatureMap
from scanreg.cloud_io import Scan
from scanreg.degeneracy import (
    DegeneracyConfig,
    DegeneracyReport,
    adaptive_ratio,
    degeneracy_factor,
    schedule_evaluation,
)
from scanreg.features import (
    KIND_EDGE,
    KIND_PLANAR,
    FeatureConfig,
    FeatureSet,
    downsample_feature_set,
    extract_features,
)
from scanreg.geometry import Pose, compose, inverse, relative, rotation_angle, transform_points
from scanreg.residuals import NoiseModel
from scanreg.selector import (
    CandidatePool,
    MatchContext,
    SelectionResult,
    SelectorConfig,
    metric_eval,
    random_select,
    stochastic_greedy_select,
)
from scanreg.solver import SolverConfig, solve_pose

MODES = ("gf", "rnd", "full")


@dataclass
class PipelineConfig:
    mode: str = "gf"
    keyframe_translation: float = 0.3
    keyframe_rotation: float = math.radians(5.0)
    seed: int = 0
    features: FeatureConfig = field(default_factory=FeatureConfig)
    assoc: AssocConfig = field(default_factory=AssocConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    selector: SelectorConfig = field(default_factory=lambda: SelectorConfig(ratio=0.2))
    degeneracy: DegeneracyConfig = field(default_factory=DegeneracyConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


class PipelineState:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.fmap = FeatureMap()
        self.frame_index = 0
        self.last_pose: Pose | None = None
        self.prev_pose: Pose | None = None
        self.last_keyframe_pose: Pose | None = None
        self.active_ratio = _initial_ratio(config)
        self.last_lambda: float | None = None


def _initial_ratio(config: PipelineConfig) -> float:
    if config.selector.ratio is not None:
        return config.selector.ratio
    return config.degeneracy.low_ratio


@dataclass
class FrameResult:
    frame: int
    timestamp: float
    pose: Pose
    n_candidates: int
    n_selected: int
    logdet_selected: float
    logdet_selected_norm: float
    ratio: float
    latencies_ms: dict
    converged: bool
    factor: float | None = None
    flagged: str | None = None
    selection: SelectionResult | None = None
    degeneracy: DegeneracyReport | None = None
    shadow: dict | None = None


def _predict(state: PipelineState) -> Pose:
    if state.last_pose is None:
        return Pose.identity()
    if state.prev_pose is None:
        return state.last_pose
    return compose(state.last_pose, relative(state.prev_pose, state.last_pose))


def _extract(scan: Scan, cfg: PipelineConfig) -> FeatureSet:
    fset = extract_features(scan, cfg.features)
    return downsample_feature_set(fset, cfg.features.voxel_edge, cfg.features.voxel_planar)


def _insert_keyframe(state: PipelineState, fset: FeatureSet, pose: Pose) -> None:
    cfg = state.config
    edge_w = transform_points(pose, fset.edge_positions())
    planar_w = transform_points(pose, fset.planar_positions())
    state.fmap.insert(edge_w, planar_w, cfg.features.voxel_edge, cfg.features.voxel_planar)
    state.last_keyframe_pose = pose


def _full_selection_result(pool: CandidatePool, prior_scale: float,
                           elapsed: float) -> SelectionResult:
    ok_rows = np.nonzero(pool.ok)[0]
    lam = prior_scale * np.eye(6)
    if ok_rows.size:
        lam = lam + pool.lam[ok_rows].sum(axis=0)
    return SelectionResult(
        selected=[int(v) for v in ok_rows],
        achieved_metric=metric_eval("logdet", lam),
        oracle_evaluations=0,
        matched_count=int(ok_rows.size),
        unmatched_count=int(len(pool) - ok_rows.size),
        elapsed=elapsed,
        terminated_by="budget",
        info=lam,
        metric="logdet",
    )


def process_scan(state: PipelineState, scan: Scan,
                 shadow_selection: bool = False) -> FrameResult:
    cfg = state.config
    t_frame = time.perf_counter()
    lat = {}

    t0 = time.perf_counter()
    fset = _extract(scan, cfg)
    lat["extract"] = time.perf_counter() - t0

    prior = cfg.selector.prior_scale
    prior_logdet = 6.0 * math.log(prior)

    if state.last_pose is None:
        # bootstrap: first scan anchors the map at identity
        pose = Pose.identity()
        t0 = time.perf_counter()
        if len(fset):
            _insert_keyframe(state, fset, pose)
        lat["map"] = time.perf_counter() - t0
        lat["assoc_select"] = 0.0
        lat["optimize"] = 0.0
        lat["total"] = time.perf_counter() - t_frame
        result = FrameResult(
            frame=state.frame_index, timestamp=scan.timestamp, pose=pose,
            n_candidates=len(fset), n_selected=0,
            logdet_selected=prior_logdet, logdet_selected_norm=0.0,
            ratio=state.active_ratio, latencies_ms=_to_ms(lat), converged=True,
            flagged="bootstrap",
        )
        state.last_pose = pose
        state.frame_index += 1
        return result

    predicted = _predict(state)

    if len(fset) == 0:
        state.prev_pose = state.last_pose
        state.last_pose = predicted
        state.frame_index += 1
        lat["assoc_select"] = 0.0
        lat["optimize"] = 0.0
        lat["map"] = 0.0
        lat["total"] = time.perf_counter() - t_frame
        return FrameResult(
            frame=state.frame_index - 1, timestamp=scan.timestamp, pose=predicted,
            n_candidates=0, n_selected=0, logdet_selected=prior_logdet,
            logdet_selected_norm=0.0, ratio=state.active_ratio,
            latencies_ms=_to_ms(lat), converged=False, flagged="empty-features",
        )

    pool = CandidatePool.from_feature_set(fset)
    ctx = MatchContext(state.fmap, predicted, cfg.noise, cfg.assoc)

    t0 = time.perf_counter()
    report = None
    if cfg.degeneracy.adaptive and schedule_evaluation(state.frame_index,
                                                       cfg.degeneracy.interval_frames):
        factor, matched = degeneracy_factor(pool, ctx, prior)
        state.active_ratio = adaptive_ratio(factor, cfg.degeneracy)
        state.last_lambda = factor
        report = DegeneracyReport(factor, cfg.degeneracy.lambda_th, state.active_ratio,
                                  state.frame_index, matched)

    frame_seed = cfg.seed + state.frame_index
    if cfg.degeneracy.adaptive:
        budget, ratio = None, state.active_ratio
    else:
        budget, ratio = cfg.selector.budget, cfg.selector.ratio
    if cfg.mode == "gf":
        sel_cfg = SelectorConfig(
            budget=budget, ratio=ratio,
            epsilon=cfg.selector.epsilon, t_max=cfg.selector.t_max,
            metric=cfg.selector.metric, prior_scale=prior,
            rng_seed=frame_seed, prefetch=cfg.selector.prefetch,
        )
        selection = stochastic_greedy_select(pool, sel_cfg, ctx)
    elif cfg.mode == "rnd":
        m = SelectorConfig(budget=budget, ratio=ratio,
                           prior_scale=prior).resolve_budget(len(pool))
        selection = random_select(pool, m, rng_seed=frame_seed, context=ctx,
                                  prior_scale=prior)
    else:  # full
        t_match = time.perf_counter()
        pool.ensure_matched(np.arange(len(pool), dtype=np.int64), ctx)
        selection = _full_selection_result(pool, prior, time.perf_counter() - t_match)

    shadow = None
    if shadow_selection:
        shadow = _shadow_compare(pool, state, frame_seed, prior)
    lat["assoc_select"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    corrs = pool.correspondences(selection.selected)
    flagged = None
    converged = False
    if len(corrs) == 0:
        pose = predicted
        flagged = "no-correspondences"
    else:
        result = solve_pose(predicted, corrs, cfg.noise, cfg.solver)
        if result.iterations == 0:
            pose = predicted
            flagged = "solver-failure"
        else:
            pose = result.pose
            converged = result.converged
            if result.near_singular:
                flagged = "near-singular"
    lat["optimize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    rel = relative(state.last_keyframe_pose, pose) if state.last_keyframe_pose else None
    if rel is None or (np.linalg.norm(rel.trans) >= cfg.keyframe_translation
                       or rotation_angle(rel) >= cfg.keyframe_rotation):
        _insert_keyframe(state, fset, pose)
    lat["map"] = time.perf_counter() - t0
    lat["total"] = time.perf_counter() - t_frame

    result_frame = FrameResult(
        frame=state.frame_index, timestamp=scan.timestamp, pose=pose,
        n_candidates=len(pool), n_selected=len(selection.selected),
        logdet_selected=selection.achieved_metric,
        logdet_selected_norm=selection.achieved_metric - prior_logdet,
        ratio=state.active_ratio, latencies_ms=_to_ms(lat),
        converged=converged, factor=state.last_lambda, flagged=flagged,
        selection=selection, degeneracy=report, shadow=shadow,
    )
    state.prev_pose = state.last_pose
    state.last_pose = pose
    state.frame_index += 1
    return result_frame


def _shadow_compare(pool: CandidatePool, state: PipelineState, frame_seed: int,
                    prior: float) -> dict:
    """Evaluate greedy/random/full selection on identical candidates and map."""
    cfg = state.config
    ratio = state.active_ratio
    m = SelectorConfig(ratio=ratio, prior_scale=prior).resolve_budget(len(pool))
    out = {}
    gf_pool = _clone_pool(pool)
    sel = stochastic_greedy_select(
        gf_pool,
        SelectorConfig(budget=m, epsilon=cfg.selector.epsilon, t_max=cfg.selector.t_max,
                       prior_scale=prior, rng_seed=frame_seed,
                       prefetch=cfg.selector.prefetch))
    out["gf"] = sel.achieved_metric
    rnd_pool = _clone_pool(pool)
    rnd = random_select(rnd_pool, m, rng_seed=frame_seed, prior_scale=prior)
    out["rnd"] = rnd.achieved_metric
    out["full"] = _full_selection_result(pool, prior, 0.0).achieved_metric
    out["m"] = m
    return out


def _clone_pool(pool: CandidatePool) -> CandidatePool:
    clone = CandidatePool(pool.positions.copy(), pool.kinds.copy())
    clone.known = pool.known.copy()
    clone.ok = pool.ok.copy()
    clone.lam = pool.lam.copy()
    clone.plane_normal = pool.plane_normal.copy()
    clone.plane_offset = pool.plane_offset.copy()
    clone.line_point = pool.line_point.copy()
    clone.line_dir = pool.line_dir.copy()
    return clone


def _to_ms(lat: dict) -> dict:
    return {k: 1000.0 * v for k, v in lat.items()}


def run_sequence(scans, config: PipelineConfig,
                 shadow_selection: bool = False) -> list[FrameResult]:
    if shadow_selection and config.mode != "full":
        raise ValueError("shadow selection comparison requires mode='full' "
                         "so all methods see fully matched candidates")
    state = PipelineState(config)
    results = []
    for scan in scans:
        results.append(process_scan(state, scan, shadow_selection=shadow_selection))
    return results


def frame_stats_dict(fr: FrameResult) -> dict:
    """One JSON-serializable stats object per frame."""
    return {
        "frame": fr.frame,
        "timestamp": fr.timestamp,
        "lambda": fr.factor,
        "ratio": fr.ratio,
        "n_candidates": fr.n_candidates,
        "n_selected": fr.n_selected,
        "logdet_selected": fr.logdet_selected,
        "logdet_selected_norm": fr.logdet_selected_norm,
        "lat_extract_ms": fr.latencies_ms.get("extract", 0.0),
        "lat_assoc_select_ms": fr.latencies_ms.get("assoc_select", 0.0),
        "lat_optimize_ms": fr.latencies_ms.get("optimize", 0.0),
        "lat_map_ms": fr.latencies_ms.get("map", 0.0),
        "lat_total_ms": fr.latencies_ms.get("total", 0.0),
        "converged": fr.converged,
        "flagged": fr.flagged,
    }
