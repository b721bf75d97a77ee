import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scanreg.geometry import (
    Pose,
    TangentDelta,
    compose,
    inverse,
    retract,
    rotation_angle,
    skew,
    transform_point,
    transform_points,
)

from conftest import random_pose


def test_skew_unit_x():
    np.testing.assert_array_equal(
        skew([1, 0, 0]), np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float))


def test_skew_zero():
    np.testing.assert_array_equal(skew([0, 0, 0]), np.zeros((3, 3)))


def test_skew_general():
    np.testing.assert_array_equal(
        skew([1, 2, 3]), np.array([[0, -3, 2], [3, 0, -1], [-2, 1, 0]], dtype=float))


def test_skew_is_cross_product():
    rng = np.random.default_rng(0)
    for _ in range(20):
        v, w = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(skew(v) @ w, np.cross(v, w), atol=1e-12)
        np.testing.assert_allclose(skew(v) + skew(v).T, 0, atol=0)


def test_transform_point_identity():
    np.testing.assert_array_equal(transform_point(Pose.identity(), [1, 2, 3]), [1, 2, 3])


def test_transform_point_translation():
    p = Pose(np.array([0, 0, 0, 1.0]), np.array([0, 0, 1.0]))
    np.testing.assert_allclose(transform_point(p, [0, 0, 0]), [0, 0, 1])


def test_transform_point_rotation_90deg_z():
    q = np.array([0, 0, np.sin(np.pi / 4), np.cos(np.pi / 4)])
    p = Pose(q, np.zeros(3))
    np.testing.assert_allclose(transform_point(p, [1, 0, 0]), [0, 1, 0], atol=1e-12)


def test_retract_zero_is_identity_map():
    rng = np.random.default_rng(1)
    pose = random_pose(rng)
    out = retract(pose, TangentDelta.zero())
    np.testing.assert_allclose(out.quat, pose.quat, atol=1e-15)
    np.testing.assert_allclose(out.trans, pose.trans, atol=1e-15)


def test_retract_pure_translation():
    out = retract(Pose.identity(), np.array([1, 0, 0, 0, 0, 0.0]))
    np.testing.assert_allclose(out.trans, [1, 0, 0])
    np.testing.assert_allclose(out.quat, [0, 0, 0, 1])


def test_retract_first_order_expansion():
    # transform under the retracted pose matches R(I + dtheta^)p + t + dt
    rng = np.random.default_rng(2)
    for _ in range(50):
        pose = random_pose(rng)
        delta = 1e-4 * rng.normal(size=6)
        p = rng.normal(size=3)
        rot = pose.rotation_matrix()
        expected = rot @ (np.eye(3) + skew(delta[3:])) @ p + pose.trans + delta[:3]
        got = transform_point(retract(pose, delta), p)
        assert np.abs(got - expected).max() < 1e-7


def test_retract_normalizes_quaternion():
    rng = np.random.default_rng(3)
    pose = Pose.identity()
    for _ in range(200):
        pose = retract(pose, rng.normal(size=6) * 0.3)
        assert pose.quat_norm_error() < 1e-9


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(4)
    for _ in range(20):
        pose = random_pose(rng)
        ident = compose(pose, inverse(pose))
        assert np.linalg.norm(ident.trans) < 1e-9
        assert rotation_angle(ident) < 1e-9


def test_retract_locally_injective():
    rng = np.random.default_rng(5)
    pose = random_pose(rng)
    for scale in (1e-3, 0.3, 2.0):
        delta = rng.normal(size=6)
        delta /= np.linalg.norm(delta)
        moved = retract(pose, delta * scale)
        rel = compose(inverse(pose), moved)
        assert np.linalg.norm(rel.trans) + rotation_angle(rel) > 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=6, max_size=6),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_transform_preserves_distances(vec, p, q):
    pose = retract(Pose.identity(), np.asarray(vec) * 0.1)
    pts = np.array([p, q], dtype=float)
    out = transform_points(pose, pts)
    d_in = np.linalg.norm(pts[0] - pts[1])
    d_out = np.linalg.norm(out[0] - out[1])
    assert abs(d_in - d_out) < 1e-9 * max(1.0, d_in)
