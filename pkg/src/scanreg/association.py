"""Map storage and correspondence search.

A feature transformed into the world frame is matched to a local plane
(planar features) or line (edge features) fitted to its k nearest map
points. Both fits are closed-form eigen-decompositions of the 3x3 neighbor
scatter; validity gates reject distant or poorly-conditioned neighborhoods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from scanreg.features import KIND_EDGE, KIND_PLANAR, voxel_downsample


@dataclass
class AssocConfig:
    k: int = 5
    max_dist: float = 1.0
    planarity: float = 0.2
    linearity_ratio: float = 3.0


@dataclass(frozen=True, eq=False)
class PlaneModel:
    """Plane as unit normal plus offset: w . x + d = 0 for points x on the plane."""

    normal: np.ndarray
    offset: float

    def distance(self, p) -> float:
        return float(self.normal @ np.asarray(p, dtype=float) + self.offset)


@dataclass(frozen=True, eq=False)
class LineModel:
    point_on_line: np.ndarray
    direction: np.ndarray

    def distance(self, p) -> float:
        rel = np.asarray(p, dtype=float) - self.point_on_line
        return float(np.linalg.norm(rel - (rel @ self.direction) * self.direction))


class PointIndex:
    """k-nearest-neighbor index over a fixed point array (ties broken by index)."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self._tree = cKDTree(self.points) if self.points.shape[0] else None

    def __len__(self) -> int:
        return self.points.shape[0]

    def query(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the k nearest points, shape (B, k).

        Missing neighbors (fewer than k points in the index) are padded with
        inf distance and index -1.
        """
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        b = q.shape[0]
        if self._tree is None:
            return np.full((b, k), np.inf), np.full((b, k), -1, dtype=np.int64)
        kk = min(k, len(self))
        dist, idx = self._tree.query(q, k=kk)
        dist = dist.reshape(b, kk)
        idx = idx.reshape(b, kk).astype(np.int64)
        # stable (distance, index) ordering so exact ties resolve by insertion order
        order = np.lexsort((idx, dist), axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        if kk < k:
            dist = np.hstack([dist, np.full((b, k - kk), np.inf)])
            idx = np.hstack([idx, np.full((b, k - kk), -1, dtype=np.int64)])
        return dist, idx


def build_map_index(points: np.ndarray) -> PointIndex:
    return PointIndex(points)


class FeatureMap:
    """World-frame edge/planar feature maps with their spatial indices."""

    def __init__(self):
        self.edge_points = np.empty((0, 3))
        self.planar_points = np.empty((0, 3))
        self.edge_index = PointIndex(self.edge_points)
        self.planar_index = PointIndex(self.planar_points)

    def insert(self, edge_points: np.ndarray, planar_points: np.ndarray,
               voxel_edge: float = 0.2, voxel_planar: float = 0.4) -> None:
        """Append world-frame points, re-filter each class, rebuild indices."""
        if edge_points is not None and len(edge_points):
            merged = np.vstack([self.edge_points, edge_points])
            self.edge_points = voxel_downsample(merged, voxel_edge) if voxel_edge > 0 else merged
            self.edge_index = PointIndex(self.edge_points)
        if planar_points is not None and len(planar_points):
            merged = np.vstack([self.planar_points, planar_points])
            self.planar_points = (
                voxel_downsample(merged, voxel_planar) if voxel_planar > 0 else merged
            )
            self.planar_index = PointIndex(self.planar_points)

    def size(self) -> tuple[int, int]:
        return len(self.edge_index), len(self.planar_index)


def fit_planes(neighbors: np.ndarray, queries: np.ndarray, planarity: float
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Least-squares plane fits for (B, k, 3) neighborhoods.

    Returns unit normals (B, 3), offsets (B,), and a validity mask that
    rejects fits whose worst point-to-plane distance exceeds `planarity`.
    Normals are flipped so that w . query + d >= 0.
    """
    nb = np.asarray(neighbors, dtype=float)
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    centroid = nb.mean(axis=1)
    rel = nb - centroid[:, None, :]
    scatter = np.einsum("bki,bkj->bij", rel, rel)
    eigvals, eigvecs = np.linalg.eigh(scatter)
    w = eigvecs[:, :, 0]
    d = -np.einsum("bi,bi->b", w, centroid)
    signed = np.einsum("bi,bi->b", w, q) + d
    flip = signed < 0
    w[flip] = -w[flip]
    d[flip] = -d[flip]
    resid = np.abs(np.einsum("bki,bi->bk", nb, w) + d[:, None]).max(axis=1)
    ok = resid <= planarity
    return w, d, ok


def fit_lines(neighbors: np.ndarray, linearity_ratio: float
              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Principal-direction line fits for (B, k, 3) neighborhoods.

    Valid when the largest scatter eigenvalue is at least `linearity_ratio`
    times the middle one (inclusive).
    """
    nb = np.asarray(neighbors, dtype=float)
    centroid = nb.mean(axis=1)
    rel = nb - centroid[:, None, :]
    scatter = np.einsum("bki,bkj->bij", rel, rel)
    eigvals, eigvecs = np.linalg.eigh(scatter)
    direction = eigvecs[:, :, 2]
    ok = eigvals[:, 2] >= linearity_ratio * eigvals[:, 1]
    return centroid, direction, ok


def batch_match(
    fmap: FeatureMap,
    pts_world: np.ndarray,
    kinds: np.ndarray,
    cfg: AssocConfig,
) -> dict[str, np.ndarray]:
    """Match world-frame candidates against the map, vectorized per class.

    Returns arrays of length N: ok mask, plane normals/offsets for planar
    candidates and line anchor/direction for edge candidates (rows of the
    other class are zero-filled).
    """
    pts = np.asarray(pts_world, dtype=float).reshape(-1, 3)
    kinds = np.asarray(kinds)
    n = pts.shape[0]
    out = {
        "ok": np.zeros(n, dtype=bool),
        "plane_normal": np.zeros((n, 3)),
        "plane_offset": np.zeros(n),
        "line_point": np.zeros((n, 3)),
        "line_dir": np.zeros((n, 3)),
    }
    if n == 0:
        return out

    planar_rows = np.nonzero(kinds == KIND_PLANAR)[0]
    if planar_rows.size and len(fmap.planar_index) >= cfg.k:
        dist, idx = fmap.planar_index.query(pts[planar_rows], cfg.k)
        in_range = dist[:, -1] <= cfg.max_dist
        rows = planar_rows[in_range]
        if rows.size:
            nb = fmap.planar_index.points[idx[in_range]]
            w, d, ok = fit_planes(nb, pts[rows], cfg.planarity)
            out["ok"][rows] = ok
            out["plane_normal"][rows] = w
            out["plane_offset"][rows] = d

    edge_rows = np.nonzero(kinds == KIND_EDGE)[0]
    if edge_rows.size and len(fmap.edge_index) >= cfg.k:
        dist, idx = fmap.edge_index.query(pts[edge_rows], cfg.k)
        in_range = dist[:, -1] <= cfg.max_dist
        rows = edge_rows[in_range]
        if rows.size:
            nb = fmap.edge_index.points[idx[in_range]]
            q0, direction, ok = fit_lines(nb, cfg.linearity_ratio)
            out["ok"][rows] = ok
            out["line_point"][rows] = q0
            out["line_dir"][rows] = direction

    return out


def find_planar_correspondence(fmap: FeatureMap, p_world, cfg: AssocConfig | None = None
                               ) -> PlaneModel | None:
    cfg = cfg or AssocConfig()
    res = batch_match(fmap, np.asarray(p_world, dtype=float)[None, :],
                      np.array([KIND_PLANAR]), cfg)
    if not res["ok"][0]:
        return None
    return PlaneModel(res["plane_normal"][0], float(res["plane_offset"][0]))


def find_edge_correspondence(fmap: FeatureMap, p_world, cfg: AssocConfig | None = None
                             ) -> LineModel | None:
    cfg = cfg or AssocConfig()
    res = batch_match(fmap, np.asarray(p_world, dtype=float)[None, :],
                      np.array([KIND_EDGE]), cfg)
    if not res["ok"][0]:
        return None
    return LineModel(res["line_point"][0], res["line_dir"][0])
