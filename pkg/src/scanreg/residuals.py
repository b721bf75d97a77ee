"""Residuals, analytic Jacobians, robust reweighting, and information blocks.

Point-to-plane residual for a plane (w, d) and sensor-frame point p:

    a = w . (R p + t) + d          (signed distance)
    r = a w = A_w (R p + t) + d w  with A_w = w w^T

Jacobian columns follow the [dt; dtheta] tangent ordering:

    dr/dt     = A_w
    dr/dtheta = -A_w R skew(p)

Edge features use two stacked plane constraints through the matched line:
one plane containing the line and the transformed point, and one containing
the line but perpendicular to the first. The stacked residual vanishes iff
the transformed point lies on the line, and the norm of the second row's
signed distance equals the point-to-line distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scanreg.association import LineModel, PlaneModel
from scanreg.geometry import Pose, skew


@dataclass
class NoiseModel:
    """Isotropic-by-default measurement covariance with optional Huber loss."""

    covariance: np.ndarray = field(default_factory=lambda: np.eye(3) * 0.02**2)
    loss: str = "none"
    huber_delta: float = 0.1

    def __post_init__(self):
        self.covariance = np.asarray(self.covariance, dtype=float).reshape(3, 3)
        if self.loss not in ("none", "huber"):
            raise ValueError(f"unknown robust loss: {self.loss}")
        self.cov_inv = np.linalg.inv(self.covariance)

    @staticmethod
    def isotropic(sigma: float, loss: str = "none", huber_delta: float = 0.1) -> "NoiseModel":
        return NoiseModel(np.eye(3) * sigma**2, loss, huber_delta)


@dataclass
class ResidualBlock:
    residual: np.ndarray      # (3,) planar or (6,) edge
    jacobian: np.ndarray      # (rows, 6)
    sigma_inv: np.ndarray     # (rows, rows) reweighted inverse covariance
    info: np.ndarray          # (6, 6) J^T sigma_inv J


def planar_residual(pose: Pose, p, plane: PlaneModel) -> tuple[np.ndarray, float]:
    """Residual vector a*w and the signed point-to-plane distance a."""
    a = float(plane.normal @ (pose.rotation_matrix() @ np.asarray(p, dtype=float)
                              + pose.trans) + plane.offset)
    return a * plane.normal, a


def planar_jacobian(pose: Pose, p, plane: PlaneModel) -> np.ndarray:
    w = plane.normal
    a_w = np.outer(w, w)
    jac = np.zeros((3, 6))
    jac[:, :3] = a_w
    jac[:, 3:] = -a_w @ pose.rotation_matrix() @ skew(p)
    return jac


def edge_planes(pose: Pose, p, line: LineModel) -> tuple[PlaneModel, PlaneModel]:
    """The two plane constraints induced by an edge correspondence.

    The first plane contains the line and the transformed point (falling back
    to a deterministic axis rule when the point lies on the line); the second
    contains the line and is perpendicular to the first. Both pass through the
    line's anchor point.
    """
    p_world = pose.rotation_matrix() @ np.asarray(p, dtype=float) + pose.trans
    d = line.direction / np.linalg.norm(line.direction)
    rel = p_world - line.point_on_line
    n1 = np.cross(d, rel)
    norm1 = np.linalg.norm(n1)
    if norm1 < 1e-12:
        # point on the line: pick the coordinate axis least aligned with it
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(d)))] = 1.0
        n1 = np.cross(d, axis)
        norm1 = np.linalg.norm(n1)
    n1 = n1 / norm1
    n2 = np.cross(d, n1)
    n2 = n2 / np.linalg.norm(n2)
    q0 = line.point_on_line
    return (PlaneModel(n1, float(-n1 @ q0)), PlaneModel(n2, float(-n2 @ q0)))


def robust_reweight(r: np.ndarray, cov: np.ndarray, loss: str = "none",
                    huber_delta: float = 0.1) -> np.ndarray:
    """Reweighted inverse covariance for a residual vector.

    For the Huber loss of the squared weighted norm s = r^T W^{-1} r:
    rho'(s) = 1 for s <= delta^2 and delta/sqrt(s) beyond, so the returned
    matrix is rho'(s) * W^{-1}. Residuals longer than 3 use a block-diagonal
    replication of W.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    blocks = r.size // cov.shape[0]
    cov_inv = np.linalg.inv(cov)
    if blocks > 1:
        full = np.zeros((r.size, r.size))
        for b in range(blocks):
            s = slice(b * cov.shape[0], (b + 1) * cov.shape[0])
            full[s, s] = cov_inv
        cov_inv = full
    weight = 1.0
    if loss == "huber":
        s = float(r @ cov_inv @ r)
        weight = huber_weight(s, huber_delta)
    elif loss != "none":
        raise ValueError(f"unknown robust loss: {loss}")
    return weight * cov_inv


def huber_weight(s: float, delta: float) -> float:
    """rho'(s) for the Huber loss over the squared weighted norm s."""
    if s <= delta * delta:
        return 1.0
    return delta / np.sqrt(s)


def huber_rho(s: np.ndarray, delta: float) -> np.ndarray:
    """Huber loss of the squared weighted norm: s inside, 2*delta*sqrt(s)-delta^2 outside."""
    s = np.asarray(s, dtype=float)
    return np.where(s <= delta * delta, s, 2.0 * delta * np.sqrt(np.maximum(s, 0.0)) - delta**2)


def info_contribution(jacobian: np.ndarray, sigma_inv: np.ndarray) -> np.ndarray:
    """Information contribution J^T Sigma^{-1} J, symmetrized."""
    lam = jacobian.T @ sigma_inv @ jacobian
    return 0.5 * (lam + lam.T)


def planar_block(pose: Pose, p, plane: PlaneModel, noise: NoiseModel) -> ResidualBlock:
    r, _ = planar_residual(pose, p, plane)
    jac = planar_jacobian(pose, p, plane)
    sig_inv = robust_reweight(r, noise.covariance, noise.loss, noise.huber_delta)
    return ResidualBlock(r, jac, sig_inv, info_contribution(jac, sig_inv))


def edge_residual_jacobian(pose: Pose, p, line: LineModel,
                           noise: NoiseModel | None = None) -> ResidualBlock:
    """Six-row block stacking the two plane constraints of an edge match."""
    noise = noise or NoiseModel()
    pi1, pi2 = edge_planes(pose, p, line)
    r1, _ = planar_residual(pose, p, pi1)
    r2, _ = planar_residual(pose, p, pi2)
    j1 = planar_jacobian(pose, p, pi1)
    j2 = planar_jacobian(pose, p, pi2)
    r = np.concatenate([r1, r2])
    jac = np.vstack([j1, j2])
    sig_inv = robust_reweight(r, noise.covariance, noise.loss, noise.huber_delta)
    return ResidualBlock(r, jac, sig_inv, info_contribution(jac, sig_inv))


def residual_block(pose: Pose, p, model, noise: NoiseModel) -> ResidualBlock:
    if isinstance(model, PlaneModel):
        return planar_block(pose, p, model, noise)
    if isinstance(model, LineModel):
        return edge_residual_jacobian(pose, p, model, noise)
    raise TypeError(f"unsupported correspondence model: {type(model)!r}")


@dataclass
class CorrespondenceSet:
    """Vectorized correspondences feeding the solver and information sums."""

    planar_points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    plane_normals: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    plane_offsets: np.ndarray = field(default_factory=lambda: np.empty(0))
    edge_points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    line_points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    line_dirs: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))

    def __len__(self) -> int:
        return self.planar_points.shape[0] + self.edge_points.shape[0]


def _edge_plane_arrays(rot, trans, pts, q0, dirs):
    """Vectorized two-plane construction for edge correspondences."""
    pw = pts @ rot.T + trans
    rel = pw - q0
    n1 = np.cross(dirs, rel)
    norms = np.linalg.norm(n1, axis=1)
    degen = norms < 1e-12
    if degen.any():
        axes = np.zeros((int(degen.sum()), 3))
        axes[np.arange(axes.shape[0]), np.argmin(np.abs(dirs[degen]), axis=1)] = 1.0
        n1[degen] = np.cross(dirs[degen], axes)
        norms = np.linalg.norm(n1, axis=1)
    n1 = n1 / norms[:, None]
    n2 = np.cross(dirs, n1)
    n2 = n2 / np.linalg.norm(n2, axis=1)[:, None]
    d1 = -np.einsum("bi,bi->b", n1, q0)
    d2 = -np.einsum("bi,bi->b", n2, q0)
    return n1, d1, n2, d2


def batch_planar_terms(rot: np.ndarray, trans: np.ndarray, pts: np.ndarray,
                       normals: np.ndarray, offsets: np.ndarray):
    """Residuals (B, 3) and Jacobians (B, 3, 6) for planar correspondences."""
    pw = pts @ rot.T + trans
    a = np.einsum("bi,bi->b", normals, pw) + offsets
    r = a[:, None] * normals
    a_w = np.einsum("bi,bj->bij", normals, normals)
    b = pts.shape[0]
    jac = np.zeros((b, 3, 6))
    jac[:, :, :3] = a_w
    sk = np.zeros((b, 3, 3))
    sk[:, 0, 1] = -pts[:, 2]
    sk[:, 0, 2] = pts[:, 1]
    sk[:, 1, 0] = pts[:, 2]
    sk[:, 1, 2] = -pts[:, 0]
    sk[:, 2, 0] = -pts[:, 1]
    sk[:, 2, 1] = pts[:, 0]
    jac[:, :, 3:] = -a_w @ (rot @ sk)
    return r, jac


def batch_edge_terms(rot: np.ndarray, trans: np.ndarray, pts: np.ndarray,
                     q0: np.ndarray, dirs: np.ndarray):
    """Residuals (B, 6) and Jacobians (B, 6, 6) for edge correspondences."""
    n1, d1, n2, d2 = _edge_plane_arrays(rot, trans, pts, q0, dirs)
    r1, j1 = batch_planar_terms(rot, trans, pts, n1, d1)
    r2, j2 = batch_planar_terms(rot, trans, pts, n2, d2)
    r = np.concatenate([r1, r2], axis=1)
    jac = np.concatenate([j1, j2], axis=1)
    return r, jac


def batch_info_blocks(pose: Pose, corrs: CorrespondenceSet, noise: NoiseModel
                      ) -> np.ndarray:
    """Per-correspondence 6x6 information blocks at the given pose.

    Order: planar rows first (as stored), then edge rows.
    """
    rot = pose.rotation_matrix()
    trans = pose.trans
    blocks = []
    w_inv = noise.cov_inv
    if corrs.planar_points.shape[0]:
        r, jac = batch_planar_terms(rot, trans, corrs.planar_points,
                                    corrs.plane_normals, corrs.plane_offsets)
        s = np.einsum("bi,ij,bj->b", r, w_inv, r)
        weights = _loss_weights(s, noise)
        jw = np.einsum("ij,bjk->bik", w_inv, jac)
        blocks.append(np.einsum("b,bri,brj->bij", weights, jac, jw))
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
        blocks.append(np.einsum("b,bri,brj->bij", weights, jac, jw))
    if not blocks:
        return np.empty((0, 6, 6))
    return np.concatenate(blocks, axis=0)


def _loss_weights(s: np.ndarray, noise: NoiseModel) -> np.ndarray:
    if noise.loss == "huber":
        d = noise.huber_delta
        return np.where(s <= d * d, 1.0, d / np.sqrt(np.maximum(s, 1e-300)))
    return np.ones_like(s)
