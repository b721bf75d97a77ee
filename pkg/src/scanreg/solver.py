"""IRLS Gauss-Newton pose optimization over selected correspondences.

Each iteration re-linearizes residuals at the current pose, refreshes the
robust weights (iteratively reweighted least squares), and solves the damped
6x6 normal equations on the tangent space. Damping starts at the configured
value (0 = pure Gauss-Newton) and escalates tenfold on steps that fail to
reduce the robust cost; hitting the ceiling aborts with converged=False.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from scanreg.geometry import Pose, retract
from scanreg.residuals import (
    CorrespondenceSet,
    NoiseModel,
    batch_edge_terms,
    batch_planar_terms,
    huber_rho,
    _loss_weights,
)

_DAMPING_CEILING = 1e8
_COND_LIMIT = 1e8


@dataclass
class SolverConfig:
    max_iterations: int = 10
    step_tolerance: float = 1e-8
    cost_tolerance: float = 1e-9
    lm_damping: float = 0.0
    prior_scale: float = 1e-3

    def __post_init__(self):
        if self.step_tolerance <= 0 or self.cost_tolerance <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolveResult:
    pose: Pose
    covariance: np.ndarray
    iterations: int
    final_cost: float
    converged: bool
    per_iteration_costs: list[float] = field(default_factory=list)
    information: np.ndarray = None
    near_singular: bool = False
    null_direction: np.ndarray | None = None
    elapsed: float = 0.0


def _residual_squares(pose: Pose, corrs: CorrespondenceSet, noise: NoiseModel):
    """Squared weighted norms r^T W^{-1} r per block, planar rows then edge rows."""
    rot = pose.rotation_matrix()
    trans = pose.trans
    w_inv = noise.cov_inv
    parts = []
    if corrs.planar_points.shape[0]:
        r, _ = batch_planar_terms(rot, trans, corrs.planar_points,
                                  corrs.plane_normals, corrs.plane_offsets)
        parts.append(np.einsum("bi,ij,bj->b", r, w_inv, r))
    if corrs.edge_points.shape[0]:
        r, _ = batch_edge_terms(rot, trans, corrs.edge_points,
                                corrs.line_points, corrs.line_dirs)
        parts.append(np.einsum("bi,ij,bj->b", r[:, :3], w_inv, r[:, :3])
                     + np.einsum("bi,ij,bj->b", r[:, 3:], w_inv, r[:, 3:]))
    if not parts:
        return np.empty(0)
    return np.concatenate(parts)


def evaluate_cost(pose: Pose, corrs: CorrespondenceSet, noise: NoiseModel) -> float:
    """Total robust cost: sum of rho(r^T W^{-1} r) over all blocks."""
    s = _residual_squares(pose, corrs, noise)
    if s.size == 0:
        return 0.0
    if noise.loss == "huber":
        return float(huber_rho(s, noise.huber_delta).sum())
    return float(s.sum())


def _linearize(pose: Pose, corrs: CorrespondenceSet, noise: NoiseModel):
    """Normal equations H, g at the given pose with refreshed robust weights."""
    rot = pose.rotation_matrix()
    trans = pose.trans
    w_inv = noise.cov_inv
    h = np.zeros((6, 6))
    g = np.zeros(6)
    if corrs.planar_points.shape[0]:
        r, jac = batch_planar_terms(rot, trans, corrs.planar_points,
                                    corrs.plane_normals, corrs.plane_offsets)
        s = np.einsum("bi,ij,bj->b", r, w_inv, r)
        weights = _loss_weights(s, noise)
        jw = np.einsum("ij,bjk->bik", w_inv, jac)
        h += np.einsum("b,bri,brj->ij", weights, jac, jw)
        g += np.einsum("b,bri,br->i", weights, jw, r)
    if corrs.edge_points.shape[0]:
        r, jac = batch_edge_terms(rot, trans, corrs.edge_points,
                                  corrs.line_points, corrs.line_dirs)
        s = (np.einsum("bi,ij,bj->b", r[:, :3], w_inv, r[:, :3])
             + np.einsum("bi,ij,bj->b", r[:, 3:], w_inv, r[:, 3:]))
        weights = _loss_weights(s, noise)
        w6 = np.zeros((6, 6))
        w6[:3, :3] = w_inv
        w6[3:, 3:] = w_inv
        jw = np.einsum("ij,bjk->bik", w6, jac)
        h += np.einsum("b,bri,brj->ij", weights, jac, jw)
        g += np.einsum("b,bri,br->i", weights, jw, r)
    return 0.5 * (h + h.T), g


def solve_pose(initial: Pose, corrs: CorrespondenceSet, noise: NoiseModel,
               config: SolverConfig | None = None) -> SolveResult:
    """Minimize the robust weighted square sum over the 6-dim tangent space."""
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    if len(corrs) == 0:
        raise ValueError("solver needs at least one correspondence")

    pose = initial
    damping = cfg.lm_damping
    cost = evaluate_cost(pose, corrs, noise)
    costs = [cost]
    converged = False
    h = np.zeros((6, 6))
    iterations = 0

    for _ in range(cfg.max_iterations):
        h, g = _linearize(pose, corrs, noise)
        stepped = False
        while True:
            try:
                step = np.linalg.solve(h + damping * np.eye(6), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.isfinite(step).all():
                cand = retract(pose, step)
                cand_cost = evaluate_cost(cand, corrs, noise)
                if cand_cost <= cost * (1.0 + 1e-12) + 1e-15:
                    pose = cand
                    stepped = True
                    iterations += 1
                    step_norm = float(np.linalg.norm(step))
                    drop = cost - cand_cost
                    cost = cand_cost
                    costs.append(cost)
                    if damping > 0:
                        damping = max(damping * 0.1, cfg.lm_damping)
                    if step_norm < cfg.step_tolerance or abs(drop) <= cfg.cost_tolerance * max(cost, 1.0):
                        converged = True
                    break
            # failed step or singular system: escalate damping
            damping = 1e-6 if damping == 0 else damping * 10.0
            if damping > _DAMPING_CEILING:
                break
        if not stepped or converged:
            break

    if iterations > 0:
        h, _ = _linearize(pose, corrs, noise)
    near_singular = False
    null_direction = None
    eigvals, eigvecs = np.linalg.eigh(h)
    info = h
    if eigvals[0] <= 0 or eigvals[-1] / max(eigvals[0], 1e-300) > _COND_LIMIT:
        near_singular = True
        null_direction = eigvecs[:, 0].copy()
        info = h + cfg.prior_scale * np.eye(6)
    covariance = np.linalg.inv(info)
    covariance = 0.5 * (covariance + covariance.T)

    return SolveResult(
        pose=pose,
        covariance=covariance,
        iterations=iterations,
        final_cost=cost,
        converged=converged and iterations > 0,
        per_iteration_costs=costs,
        information=h,
        near_singular=near_singular,
        null_direction=null_direction,
        elapsed=time.perf_counter() - t0,
    )
