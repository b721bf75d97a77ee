import math

import numpy as np
import pytest

from scanreg.geometry import Pose, transform_points
from scanreg.synth import (
    SceneModel,
    SensorModel,
    generate_scene,
    save_scene,
    load_scene,
    simulate_scan,
)


def test_corridor_construction():
    scene = generate_scene("corridor", params={"width": 2.0, "length": 40.0})
    assert len(scene.surfaces) == 3
    normals = sorted(tuple(np.round(s.normal, 9)) for s in scene.surfaces)
    assert (0.0, 0.0, 1.0) in normals
    assert (1.0, 0.0, 0.0) in normals and (-1.0, 0.0, 0.0) in normals


def test_room_construction():
    scene = generate_scene("room", seed=1, params={"size": (10, 8, 3)})
    boundary = [s for s in scene.surfaces if s.tag in ("floor", "ceiling", "wall")]
    assert len(boundary) == 6
    assert len(scene.surfaces) > 6  # clutter and pole faces


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        generate_scene("corridor", params={"width": -1.0})
    with pytest.raises(ValueError):
        generate_scene("corridor", params={"bogus": 1})
    with pytest.raises(ValueError):
        generate_scene("volcano")


def test_scene_json_roundtrip(tmp_path):
    scene = generate_scene("room", seed=5)
    path = tmp_path / "scene.json"
    save_scene(scene, path)
    back = load_scene(path)
    assert back.kind == scene.kind
    assert len(back.surfaces) == len(scene.surfaces)
    np.testing.assert_allclose(back.surfaces[0].normal, scene.surfaces[0].normal)


def test_floor_only_scene_noise_free():
    floor = generate_scene("outdoor-ground", params={"columns": 0})
    sensor = SensorModel(rings=8, horizontal_resolution=math.radians(3),
                         elevation_min=math.radians(-25), elevation_max=math.radians(-5))
    pose = Pose(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.5]))
    scan, labels = simulate_scan(floor, sensor, pose, rng_seed=0)
    assert len(scan) > 100
    world = transform_points(pose, scan.xyz)
    assert np.abs(world[:, 2]).max() < 1e-9


def test_determinism_same_seed():
    scene = generate_scene("room", seed=2)
    sensor = SensorModel(rings=8, horizontal_resolution=math.radians(3),
                         range_noise_sigma=0.02, outlier_rate=0.05)
    pose = Pose(np.array([0, 0, 0, 1.0]), np.array([5.0, 4.0, 1.4]))
    s1, l1 = simulate_scan(scene, sensor, pose, rng_seed=7)
    s2, l2 = simulate_scan(scene, sensor, pose, rng_seed=7)
    np.testing.assert_array_equal(s1.xyz, s2.xyz)
    np.testing.assert_array_equal(l1, l2)
    s3, _ = simulate_scan(scene, sensor, pose, rng_seed=8)
    assert not np.array_equal(s1.xyz, s3.xyz)


def test_range_noise_statistics():
    floor = generate_scene("outdoor-ground", params={"columns": 0})
    sensor = SensorModel(rings=64, horizontal_resolution=math.radians(0.2),
                         range_noise_sigma=0.02,
                         elevation_min=math.radians(-25), elevation_max=math.radians(-8))
    pose = Pose(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.5]))
    scan, _ = simulate_scan(floor, sensor, pose, rng_seed=3)
    assert len(scan) > 1e5
    world = transform_points(pose, scan.xyz)
    # perturbing range by sigma perturbs plane distance by sigma * |d_z|
    dirs = scan.xyz / np.linalg.norm(scan.xyz, axis=1, keepdims=True)
    std = np.std(world[:, 2] / dirs[:, 2])
    assert 0.018 <= std <= 0.022


def test_outdoor_ground_dominates():
    scene = generate_scene("outdoor-ground", seed=4)
    sensor = SensorModel(rings=16, horizontal_resolution=math.radians(1))
    pose = Pose(np.array([0, 0, 0, 1.0]), np.array([0.0, 0.0, 1.6]))
    scan, labels = simulate_scan(scene, sensor, pose, rng_seed=0)
    tags = np.array(scene.surface_tags())[labels]
    assert (tags == "ground").mean() >= 0.5


def test_pose_outside_free_space_rejected(corridor_scene, sensor):
    bad = Pose(np.array([0, 0, 0, 1.0]), np.array([50.0, 0.0, 1.0]))
    with pytest.raises(ValueError, match="free space"):
        simulate_scan(corridor_scene, sensor, bad, rng_seed=0)


def test_corridor_degenerate_along_axis(corridor_scene, sensor):
    """Translating the sensor along the corridor leaves surface distances unchanged."""
    p0 = Pose(np.array([0, 0, 0, 1.0]), np.array([0.0, 10.0, 1.2]))
    p1 = Pose(np.array([0, 0, 0, 1.0]), np.array([0.0, 12.0, 1.2]))
    s0, l0 = simulate_scan(corridor_scene, sensor, p0, rng_seed=0)
    s1, l1 = simulate_scan(corridor_scene, sensor, p1, rng_seed=0)
    # identical scans in the sensor frame away from the corridor ends
    keep0 = np.abs(s0.xyz[:, 1]) < 5.0
    keep1 = np.abs(s1.xyz[:, 1]) < 5.0
    assert keep0.sum() > 100
    np.testing.assert_allclose(s0.xyz[keep0][:100], s1.xyz[keep1][:100], atol=1e-9)
