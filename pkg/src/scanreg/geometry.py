"""Rigid-body math: quaternion poses, skew operator, tangent-space retraction.

Tangent increments are ordered [dt; dtheta] (translation first, then
axis-angle rotation); every Jacobian in the package uses that column layout.
The rotation update is right-multiplicative, R <- R @ exp(dtheta^), and the
translation update is additive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass(frozen=True, eq=False)
class Pose:
    """6-DoF rigid transform: unit quaternion (x, y, z, w) plus translation in meters."""

    quat: np.ndarray
    trans: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @staticmethod
    def from_rotation_translation(rot: np.ndarray, trans) -> "Pose":
        q = Rotation.from_matrix(np.asarray(rot, dtype=float)).as_quat()
        return Pose(q, np.asarray(trans, dtype=float).copy())

    def rotation_matrix(self) -> np.ndarray:
        return Rotation.from_quat(self.quat).as_matrix()

    def quat_norm_error(self) -> float:
        return abs(float(np.linalg.norm(self.quat)) - 1.0)


@dataclass(frozen=True, eq=False)
class TangentDelta:
    """Local pose increment: translation delta (m) and axis-angle rotation delta (rad)."""

    d_translation: np.ndarray
    d_rotation: np.ndarray

    @staticmethod
    def zero() -> "TangentDelta":
        return TangentDelta(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_array(vec) -> "TangentDelta":
        v = np.asarray(vec, dtype=float)
        return TangentDelta(v[:3].copy(), v[3:6].copy())

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.d_translation, self.d_rotation])


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix such that skew(v) @ w == cross(v, w)."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def transform_point(pose: Pose, p) -> np.ndarray:
    """Apply the rigid transform: R @ p + t."""
    return pose.rotation_matrix() @ np.asarray(p, dtype=float) + pose.trans


def transform_points(pose: Pose, pts: np.ndarray) -> np.ndarray:
    """Apply the rigid transform to an (N, 3) array of points."""
    return pts @ pose.rotation_matrix().T + pose.trans


def retract(pose: Pose, delta) -> Pose:
    """Map a 6-dim tangent increment onto the pose manifold.

    `delta` may be a TangentDelta or a length-6 array ordered [dt; dtheta].
    The rotation delta multiplies on the right (matching the Jacobians of
    the residual modules); the translation delta is added.
    """
    if isinstance(delta, TangentDelta):
        dt, dth = delta.d_translation, delta.d_rotation
    else:
        v = np.asarray(delta, dtype=float)
        dt, dth = v[:3], v[3:6]
    r = Rotation.from_quat(pose.quat) * Rotation.from_rotvec(dth)
    q = r.as_quat()
    q = q / np.linalg.norm(q)
    return Pose(q, pose.trans + dt)


def compose(a: Pose, b: Pose) -> Pose:
    """Composition a ∘ b: apply b first, then a."""
    ra = Rotation.from_quat(a.quat)
    q = (ra * Rotation.from_quat(b.quat)).as_quat()
    q = q / np.linalg.norm(q)
    return Pose(q, ra.apply(b.trans) + a.trans)


def inverse(pose: Pose) -> Pose:
    r_inv = Rotation.from_quat(pose.quat).inv()
    q = r_inv.as_quat()
    return Pose(q / np.linalg.norm(q), -r_inv.apply(pose.trans))


def relative(a: Pose, b: Pose) -> Pose:
    """Relative transform taking frame a to frame b: inverse(a) ∘ b."""
    return compose(inverse(a), b)


def rotation_angle(pose: Pose) -> float:
    """Geodesic rotation angle of the pose, in radians."""
    return float(Rotation.from_quat(pose.quat).magnitude())
