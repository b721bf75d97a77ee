import numpy as np
import pytest

from scanreg.association import (
    AssocConfig,
    FeatureMap,
    PointIndex,
    build_map_index,
    find_edge_correspondence,
    find_planar_correspondence,
    fit_lines,
)
from scanreg.features import KIND_EDGE, KIND_PLANAR


def _map_with(planar=None, edge=None):
    fmap = FeatureMap()
    fmap.insert(edge if edge is not None else np.empty((0, 3)),
                planar if planar is not None else np.empty((0, 3)),
                voxel_edge=0.0, voxel_planar=0.0)
    return fmap


def test_empty_index_query():
    idx = build_map_index(np.empty((0, 3)))
    dist, ids = idx.query(np.array([[0.0, 0, 0]]), k=3)
    assert np.isinf(dist).all()
    assert (ids == -1).all()


def test_k1_nearest():
    idx = build_map_index(np.array([[0.0, 0, 0], [1.0, 0, 0]]))
    dist, ids = idx.query(np.array([[0.1, 0, 0]]), k=1)
    assert ids[0, 0] == 0


def test_knn_matches_bruteforce():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-5, 5, size=(1000, 3))
    idx = build_map_index(pts)
    queries = rng.uniform(-5, 5, size=(30, 3))
    dist, ids = idx.query(queries, k=5)
    for qi, q in enumerate(queries):
        d = np.linalg.norm(pts - q, axis=1)
        expect = set(np.argsort(d)[:5].tolist())
        assert set(ids[qi].tolist()) == expect


def test_tie_break_by_insertion_order():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0]])
    idx = build_map_index(pts)
    _, ids = idx.query(np.array([[0.0, 0, 0]]), k=3)
    assert ids[0].tolist() == [0, 1, 2]


def test_plane_fit_exact():
    pts = np.array([[0, 0, 1.0], [1, 0, 1.0], [0, 1, 1.0], [1, 1, 1.0], [0.5, 0.5, 1.0]])
    fmap = _map_with(planar=pts)
    plane = find_planar_correspondence(fmap, np.array([0.5, 0.5, 2.0]))
    assert plane is not None
    # sign fixed so the query side is positive
    np.testing.assert_allclose(plane.normal, [0, 0, 1], atol=1e-9)
    assert abs(plane.offset + 1.0) < 1e-9
    assert plane.distance([0.5, 0.5, 2.0]) > 0


def test_plane_none_when_too_far():
    pts = np.array([[10.0, 0, 0], [10.1, 0, 0], [10, 0.1, 0], [10.1, 0.1, 0], [10, 0, 0.1]])
    fmap = _map_with(planar=pts)
    assert find_planar_correspondence(fmap, np.zeros(3), AssocConfig(max_dist=1.0)) is None


def test_plane_fit_noisy_normal_within_1deg():
    rng = np.random.default_rng(1)
    errors = []
    for trial in range(50):
        base = rng.uniform(-0.3, 0.3, size=(5, 2))
        pts = np.column_stack([base, rng.normal(0, 0.01, size=5)])
        fmap = _map_with(planar=pts)
        plane = find_planar_correspondence(fmap, np.array([0.0, 0.0, 1.0]))
        assert plane is not None
        errors.append(np.degrees(np.arccos(min(1.0, abs(plane.normal[2])))))
    assert np.mean(errors) < 1.0


def test_planarity_gate_rejects_blob():
    rng = np.random.default_rng(2)
    pts = rng.normal(0, 0.5, size=(5, 3))
    fmap = _map_with(planar=pts)
    cfg = AssocConfig(planarity=0.05, max_dist=10.0)
    assert find_planar_correspondence(fmap, np.zeros(3), cfg) is None


def test_supporting_points_within_planarity():
    rng = np.random.default_rng(3)
    cfg = AssocConfig()
    for _ in range(20):
        pts = np.column_stack([rng.uniform(-0.4, 0.4, size=(5, 2)),
                               rng.normal(0, 0.03, size=5)])
        fmap = _map_with(planar=pts)
        plane = find_planar_correspondence(fmap, np.array([0, 0, 0.5]), cfg)
        if plane is None:
            continue
        dists = np.abs(pts @ plane.normal + plane.offset)
        assert dists.max() <= cfg.planarity + 1e-12


def test_line_fit_on_z_axis():
    pts = np.array([[0, 0, float(z)] for z in range(5)])
    fmap = _map_with(edge=pts)
    line = find_edge_correspondence(fmap, np.array([0.1, 0, 2.0]))
    assert line is not None
    assert abs(abs(line.direction[2]) - 1.0) < 1e-9


def test_line_rejects_isotropic_blob():
    rng = np.random.default_rng(4)
    pts = rng.normal(0, 0.3, size=(5, 3))
    fmap = _map_with(edge=pts)
    assert find_edge_correspondence(fmap, np.zeros(3), AssocConfig(max_dist=10.0)) is None


def test_linearity_gate_inclusive_at_ratio():
    # construct neighborhoods with eigenvalue ratio exactly 3 (accepted) and
    # just below (rejected)
    lam_mid = 1.0
    for ratio, expect in ((3.0, True), (2.9, False)):
        a = np.sqrt(ratio * lam_mid / 2)
        b = np.sqrt(lam_mid / 2)
        pts = np.array([
            [a, 0, 0], [-a, 0, 0],
            [0, b, 0], [0, -b, 0],
            [0, 0, 0],
        ])
        centroid, direction, ok = fit_lines(pts[None], linearity_ratio=3.0)
        assert bool(ok[0]) is expect


def test_map_insert_downsamples_and_reindexes():
    fmap = FeatureMap()
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 1, size=(500, 3))
    fmap.insert(np.empty((0, 3)), pts, voxel_edge=0.2, voxel_planar=0.4)
    n_edge, n_planar = fmap.size()
    assert n_edge == 0
    assert 0 < n_planar <= 3**3
    # queries are a pure read: map arrays unchanged
    before = fmap.planar_points.copy()
    fmap.planar_index.query(np.zeros((1, 3)), k=3)
    np.testing.assert_array_equal(before, fmap.planar_points)
