import math

import numpy as np
import pytest

from scanreg.association import AssocConfig, FeatureMap
from scanreg.features import FeatureConfig, extract_features
from scanreg.geometry import Pose
from scanreg.residuals import NoiseModel
from scanreg.selector import CandidatePool, MatchContext
from scanreg.synth import SceneModel, SensorModel, generate_scene, simulate_scan


def random_pose(rng, max_trans=2.0, max_angle=0.8) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    q = np.concatenate([axis * math.sin(angle / 2), [math.cos(angle / 2)]])
    return Pose(q, rng.uniform(-max_trans, max_trans, size=3))


def random_psd_blocks(rng, n, max_rank=3) -> np.ndarray:
    lams = np.zeros((n, 6, 6))
    for i in range(n):
        g = rng.normal(size=(6, rng.integers(1, max_rank + 1)))
        lams[i] = g @ g.T
    return lams


@pytest.fixture(scope="session")
def room_scene() -> SceneModel:
    return generate_scene("room", seed=3)


@pytest.fixture(scope="session")
def corridor_scene() -> SceneModel:
    return generate_scene("corridor", seed=3)


@pytest.fixture(scope="session")
def sensor() -> SensorModel:
    return SensorModel(rings=16, horizontal_resolution=math.radians(2.0),
                       max_range=40.0, range_noise_sigma=0.0)


@pytest.fixture(scope="session")
def room_view(room_scene, sensor):
    """Map from one noise-free room scan plus a second scan to match against."""
    center = Pose(np.array([0, 0, 0, 1.0]), np.array([5.0, 4.0, 1.4]))
    scan0, _ = simulate_scan(room_scene, sensor, center, rng_seed=0)
    fcfg = FeatureConfig()
    fset0 = extract_features(scan0, fcfg)
    fmap = FeatureMap()
    fmap.insert(fset0.edge_positions(), fset0.planar_positions(),
                fcfg.voxel_edge, fcfg.voxel_planar)
    pose1 = Pose(np.array([0, 0, 0, 1.0]), np.array([5.1, 4.05, 1.4]))
    scan1, _ = simulate_scan(room_scene, sensor, pose1, rng_seed=1)
    fset1 = extract_features(scan1, fcfg)
    return fmap, fset1, pose1


def make_context(fmap, pose, loss="none") -> MatchContext:
    return MatchContext(fmap, pose, NoiseModel.isotropic(0.02, loss=loss), AssocConfig())


def matched_pool(room_view_fixture) -> tuple[CandidatePool, MatchContext]:
    fmap, fset, pose = room_view_fixture
    pool = CandidatePool.from_feature_set(fset)
    ctx = make_context(fmap, pose)
    pool.ensure_matched(np.arange(len(pool)), ctx)
    return pool, ctx
