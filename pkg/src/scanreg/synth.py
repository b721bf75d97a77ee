"""Synthetic scenes, sensors, and ray-cast scan simulation.

Scenes are collections of bounded planar patches plus reference line
segments marking physical edges (pole corners, wall junctions). Scans are
simulated with per-ring elevation angles so downstream per-ring curvature
extraction behaves like it would on an organized sensor sweep.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scanreg.cloud_io import Scan
from scanreg.geometry import Pose


@dataclass
class Surface:
    """Bounded planar patch: origin, unit normal, two in-plane axes with half extents."""

    origin: np.ndarray
    normal: np.ndarray
    axis_u: np.ndarray
    axis_v: np.ndarray
    half_u: float
    half_v: float
    tag: str = "surface"

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        self.normal = np.asarray(self.normal, dtype=float)
        self.normal = self.normal / np.linalg.norm(self.normal)
        self.axis_u = np.asarray(self.axis_u, dtype=float)
        self.axis_v = np.asarray(self.axis_v, dtype=float)
        if self.half_u <= 0 or self.half_v <= 0:
            raise ValueError("surface extents must be positive")


@dataclass
class EdgeStructure:
    """Reference line segment along a physical edge (for ground-truth label checks)."""

    start: np.ndarray
    end: np.ndarray
    tag: str = "edge"

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)


@dataclass
class SceneModel:
    kind: str
    surfaces: list[Surface]
    edge_structures: list[EdgeStructure] = field(default_factory=list)
    free_lo: np.ndarray = field(default_factory=lambda: np.array([-1e9, -1e9, 0.0]))
    free_hi: np.ndarray = field(default_factory=lambda: np.array([1e9, 1e9, 1e9]))

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p >= self.free_lo) and np.all(p <= self.free_hi))

    def surface_tags(self) -> list[str]:
        return [s.tag for s in self.surfaces]

    def to_json(self) -> str:
        def _surf(s: Surface):
            return {
                "origin": s.origin.tolist(),
                "normal": s.normal.tolist(),
                "axis_u": s.axis_u.tolist(),
                "axis_v": s.axis_v.tolist(),
                "half_u": s.half_u,
                "half_v": s.half_v,
                "tag": s.tag,
            }

        return json.dumps(
            {
                "kind": self.kind,
                "surfaces": [_surf(s) for s in self.surfaces],
                "edge_structures": [
                    {"start": e.start.tolist(), "end": e.end.tolist(), "tag": e.tag}
                    for e in self.edge_structures
                ],
                "free_lo": self.free_lo.tolist(),
                "free_hi": self.free_hi.tolist(),
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "SceneModel":
        obj = json.loads(text)
        surfaces = [Surface(**s) for s in obj["surfaces"]]
        edges = [EdgeStructure(**e) for e in obj.get("edge_structures", [])]
        return SceneModel(
            obj["kind"],
            surfaces,
            edges,
            np.asarray(obj["free_lo"], dtype=float),
            np.asarray(obj["free_hi"], dtype=float),
        )


@dataclass
class SensorModel:
    rings: int = 16
    horizontal_resolution: float = math.radians(1.0)
    max_range: float = 60.0
    range_noise_sigma: float = 0.0
    outlier_rate: float = 0.0
    outlier_magnitude: float = 1.0
    elevation_min: float = math.radians(-15.0)
    elevation_max: float = math.radians(15.0)

    def __post_init__(self):
        if self.rings < 1:
            raise ValueError("rings must be >= 1")
        if self.range_noise_sigma < 0:
            raise ValueError("range_noise_sigma must be >= 0")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must lie in [0, 1]")

    def ring_elevations(self) -> np.ndarray:
        if self.rings == 1:
            return np.array([0.5 * (self.elevation_min + self.elevation_max)])
        return np.linspace(self.elevation_min, self.elevation_max, self.rings)


def _rect(origin, normal, axis_u, axis_v, half_u, half_v, tag) -> Surface:
    return Surface(np.array(origin, dtype=float), np.array(normal, dtype=float),
                   np.array(axis_u, dtype=float), np.array(axis_v, dtype=float),
                   float(half_u), float(half_v), tag)


def _column(center_xy, half_width, height, tag, edges: list[EdgeStructure]) -> list[Surface]:
    """Square vertical column made of four narrow faces; corner lines become edges."""
    cx, cy = center_xy
    w = half_width
    h2 = height / 2.0
    faces = [
        _rect([cx + w, cy, h2], [1, 0, 0], [0, 1, 0], [0, 0, 1], w, h2, tag),
        _rect([cx - w, cy, h2], [-1, 0, 0], [0, 1, 0], [0, 0, 1], w, h2, tag),
        _rect([cx, cy + w, h2], [0, 1, 0], [1, 0, 0], [0, 0, 1], w, h2, tag),
        _rect([cx, cy - w, h2], [0, -1, 0], [1, 0, 0], [0, 0, 1], w, h2, tag),
    ]
    for sx in (-w, w):
        for sy in (-w, w):
            edges.append(EdgeStructure([cx + sx, cy + sy, 0.0], [cx + sx, cy + sy, height], tag))
    return faces


def generate_scene(kind: str, seed: int = 0, params: dict | None = None) -> SceneModel:
    """Build a synthetic scene of the given kind.

    corridor: two parallel walls plus a floor, translation-invariant along +y.
    room: closed box with interior clutter panels and a square pole.
    outdoor-ground: dominant ground plane with scattered vertical columns.
    """
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "corridor":
        width = float(params.pop("width", 2.0))
        length = float(params.pop("length", 40.0))
        height = float(params.pop("height", 3.0))
        if params:
            raise ValueError(f"unknown corridor params: {sorted(params)}")
        if width <= 0 or length <= 0 or height <= 0:
            raise ValueError("corridor dimensions must be positive")
        cy, h2 = length / 2.0, height / 2.0
        surfaces = [
            _rect([-width / 2, cy, h2], [1, 0, 0], [0, 1, 0], [0, 0, 1], cy, h2, "wall"),
            _rect([width / 2, cy, h2], [-1, 0, 0], [0, 1, 0], [0, 0, 1], cy, h2, "wall"),
            _rect([0, cy, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0], width / 2, cy, "floor"),
        ]
        edges = [
            EdgeStructure([-width / 2, 0, 0], [-width / 2, length, 0], "wall-floor"),
            EdgeStructure([width / 2, 0, 0], [width / 2, length, 0], "wall-floor"),
        ]
        margin = 0.2
        return SceneModel(
            kind, surfaces, edges,
            np.array([-width / 2 + margin, margin, 0.3]),
            np.array([width / 2 - margin, length - margin, height - margin]),
        )

    if kind == "room":
        size = params.pop("size", (10.0, 8.0, 3.0))
        clutter = int(params.pop("clutter", 4))
        with_pole = bool(params.pop("pole", True))
        if params:
            raise ValueError(f"unknown room params: {sorted(params)}")
        lx, ly, lz = (float(v) for v in size)
        cx, cy, cz = lx / 2, ly / 2, lz / 2
        surfaces = [
            _rect([cx, cy, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0], cx, cy, "floor"),
            _rect([cx, cy, lz], [0, 0, -1], [1, 0, 0], [0, 1, 0], cx, cy, "ceiling"),
            _rect([0, cy, cz], [1, 0, 0], [0, 1, 0], [0, 0, 1], cy, cz, "wall"),
            _rect([lx, cy, cz], [-1, 0, 0], [0, 1, 0], [0, 0, 1], cy, cz, "wall"),
            _rect([cx, 0, cz], [0, 1, 0], [1, 0, 0], [0, 0, 1], cx, cz, "wall"),
            _rect([cx, ly, cz], [0, -1, 0], [1, 0, 0], [0, 0, 1], cx, cz, "wall"),
        ]
        edges: list[EdgeStructure] = []
        for k in range(clutter):
            # Tilted panels hugging the walls, mixed orientations.
            ang = rng.uniform(0, 2 * math.pi)
            tilt = rng.uniform(math.radians(25), math.radians(65))
            n = np.array([math.cos(ang) * math.sin(tilt),
                          math.sin(ang) * math.sin(tilt),
                          math.cos(tilt)])
            pos = np.array([rng.uniform(0.15 * lx, 0.85 * lx),
                            rng.uniform(0.15 * ly, 0.85 * ly),
                            rng.uniform(0.3 * lz, 0.7 * lz)])
            u = np.cross(n, [0, 0, 1.0])
            if np.linalg.norm(u) < 1e-6:
                u = np.array([1.0, 0, 0])
            u = u / np.linalg.norm(u)
            v = np.cross(n, u)
            surfaces.append(Surface(pos, n, u, v, 0.9, 0.7, f"panel{k}"))
        if with_pole:
            surfaces += _column((0.75 * lx, 0.7 * ly), 0.08, lz, "pole", edges)
        margin = 0.3
        return SceneModel(
            kind, surfaces, edges,
            np.array([margin, margin, 0.3]),
            np.array([lx - margin, ly - margin, lz - margin]),
        )

    if kind == "outdoor-ground":
        extent = float(params.pop("extent", 60.0))
        n_columns = int(params.pop("columns", 10))
        if params:
            raise ValueError(f"unknown outdoor-ground params: {sorted(params)}")
        half = extent / 2.0
        surfaces = [
            _rect([0, 0, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0], half, half, "ground"),
        ]
        edges: list[EdgeStructure] = []
        for _ in range(n_columns):
            pos = rng.uniform(-0.8 * half, 0.8 * half, size=2)
            if np.linalg.norm(pos) < 3.0:
                pos = pos + np.sign(pos + 1e-9) * 3.0
            height = rng.uniform(2.5, 5.0)
            surfaces += _column(tuple(pos), 0.1, height, "column", edges)
        return SceneModel(
            kind, surfaces, edges,
            np.array([-half + 1, -half + 1, 0.3]),
            np.array([half - 1, half - 1, 20.0]),
        )

    raise ValueError(f"unknown scene kind: {kind}")


def simulate_scan(
    scene: SceneModel,
    sensor: SensorModel,
    pose: Pose,
    rng_seed: int = 0,
    timestamp: float = 0.0,
    min_range: float = 0.1,
) -> tuple[Scan, np.ndarray]:
    """Ray-cast the scene from the given pose.

    Returns the scan in the sensor frame together with per-point ground-truth
    surface indices into scene.surfaces. Each ray hits the nearest surface
    within max_range; range noise is Gaussian, and with probability
    outlier_rate a range is additionally shifted by a full +/-outlier_magnitude
    (sign drawn uniformly). Deterministic for a fixed seed.
    """
    if not scene.contains(pose.trans):
        raise ValueError(f"sensor position {pose.trans} outside scene free space")
    rng = np.random.default_rng(rng_seed)
    n_az = max(1, int(round(2 * math.pi / sensor.horizontal_resolution)))
    azimuths = np.arange(n_az) * sensor.horizontal_resolution
    elevations = sensor.ring_elevations()

    cos_el = np.cos(elevations)[:, None]
    dirs = np.stack(
        [
            cos_el * np.cos(azimuths)[None, :],
            cos_el * np.sin(azimuths)[None, :],
            np.broadcast_to(np.sin(elevations)[:, None], (sensor.rings, n_az)),
        ],
        axis=-1,
    ).reshape(-1, 3)
    rings = np.repeat(np.arange(sensor.rings, dtype=np.int32), n_az)

    rot = pose.rotation_matrix()
    origin = pose.trans
    dirs_world = dirs @ rot.T

    n_rays = dirs.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_surf = np.full(n_rays, -1, dtype=np.int64)
    for si, surf in enumerate(scene.surfaces):
        denom = dirs_world @ surf.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = ((surf.origin - origin) @ surf.normal) / denom
        valid = np.isfinite(t_hit) & (t_hit > min_range) & (t_hit <= sensor.max_range)
        if not valid.any():
            continue
        hits = origin + t_hit[valid, None] * dirs_world[valid]
        rel = hits - surf.origin
        inb = (np.abs(rel @ surf.axis_u) <= surf.half_u) & (np.abs(rel @ surf.axis_v) <= surf.half_v)
        sel = np.where(valid)[0][inb]
        closer = t_hit[sel] < best_t[sel]
        sel = sel[closer]
        best_t[sel] = t_hit[sel]
        best_surf[sel] = si

    hit_mask = best_surf >= 0
    ranges = best_t[hit_mask]
    n_hit = int(hit_mask.sum())

    noise = rng.normal(0.0, 1.0, size=n_hit) * sensor.range_noise_sigma
    u_out = rng.random(n_hit)
    signs = np.where(rng.random(n_hit) < 0.5, -1.0, 1.0)
    ranges = ranges + noise
    out_mask = u_out < sensor.outlier_rate
    ranges = ranges + np.where(out_mask, signs * sensor.outlier_magnitude, 0.0)
    ranges = np.maximum(ranges, 1e-6)

    xyz = ranges[:, None] * dirs[hit_mask]
    scan = Scan(xyz, intensity=None, ring=rings[hit_mask], timestamp=timestamp)
    return scan, best_surf[hit_mask]


def default_trajectory(scene: SceneModel, frames: int, step: float = 0.25) -> list[tuple[float, Pose]]:
    """Scripted ground-truth trajectory for a scene, 10 Hz timestamps."""
    poses = []
    if scene.kind == "corridor":
        y0 = scene.free_lo[1] + 1.0
        y1 = scene.free_hi[1] - 1.0
        for i in range(frames):
            y = min(y0 + step * i, y1)
            poses.append((0.1 * i, Pose(np.array([0, 0, 0, 1.0]), np.array([0.0, y, 1.2]))))
        return poses
    if scene.kind == "room":
        center = 0.5 * (scene.free_lo + scene.free_hi)
        radius = 0.25 * min(scene.free_hi[0] - scene.free_lo[0], scene.free_hi[1] - scene.free_lo[1])
        for i in range(frames):
            ang = 2 * math.pi * i / max(frames, 1) * 0.75
            pos = center + np.array([radius * math.cos(ang), radius * math.sin(ang), 0.0])
            pos[2] = 1.3
            yaw = ang + math.pi / 2
            q = np.array([0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2)])
            poses.append((0.1 * i, Pose(q, pos)))
        return poses
    if scene.kind == "outdoor-ground":
        for i in range(frames):
            x = -10.0 + step * 2 * i
            yaw = 0.02 * i
            q = np.array([0.0, 0.0, math.sin(yaw / 2), math.cos(yaw / 2)])
            poses.append((0.1 * i, Pose(q, np.array([x, 0.5 * math.sin(0.1 * i), 1.6]))))
        return poses
    raise ValueError(f"no default trajectory for scene kind {scene.kind}")


def save_scene(scene: SceneModel, path) -> None:
    Path(path).write_text(scene.to_json())


def load_scene(path) -> SceneModel:
    return SceneModel.from_json(Path(path).read_text())
