"""Curvature-based edge/planar feature extraction on organized scans.

Curvature follows the scan-line convention: for point i with a window of
half_window neighbors per side on the same ring,

    c_i = || sum_{j in window, j != i} (p_i - p_j) || / (2 * half_window * ||p_i||)

The normalization by range makes thresholds distance-invariant. Points with
fewer than half_window neighbors on either side receive an infinite sentinel
and never become features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scanreg.cloud_io import Scan

KIND_PLANAR = 0
KIND_EDGE = 1


@dataclass
class FeatureConfig:
    edge_threshold: float = 0.1
    planar_threshold: float = 0.01
    edge_per_ring: int = 20
    planar_per_ring: int = 40
    half_window: int = 5
    sectors: int = 6
    voxel_edge: float = 0.2
    voxel_planar: float = 0.4


@dataclass(frozen=True, eq=False)
class FeaturePoint:
    position: np.ndarray
    kind: int
    curvature: float


@dataclass
class FeatureSet:
    """Extracted features as parallel arrays; kinds use KIND_PLANAR / KIND_EDGE."""

    positions: np.ndarray
    kinds: np.ndarray
    curvatures: np.ndarray
    frame_timestamp: float = 0.0

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def features(self) -> list[FeaturePoint]:
        return [
            FeaturePoint(self.positions[i], int(self.kinds[i]), float(self.curvatures[i]))
            for i in range(len(self))
        ]

    def edge_positions(self) -> np.ndarray:
        return self.positions[self.kinds == KIND_EDGE]

    def planar_positions(self) -> np.ndarray:
        return self.positions[self.kinds == KIND_PLANAR]


def compute_curvature(scan: Scan, half_window: int = 5) -> np.ndarray:
    """Per-point curvature, computed ring by ring in stored scan order.

    Boundary points (fewer than half_window neighbors on a side) get +inf.
    Raises ValueError when the scan carries no ring channel.
    """
    if scan.ring is None:
        raise ValueError("curvature needs an organized scan with ring indices")
    if half_window < 1:
        raise ValueError("half_window must be >= 1")
    n = len(scan)
    curv = np.full(n, np.inf)
    for ring in np.unique(scan.ring):
        idx = np.nonzero(scan.ring == ring)[0]
        pts = scan.xyz[idx]
        m = idx.size
        if m < 2 * half_window + 1:
            continue
        # windowed neighbor sum via cumulative sums
        csum = np.vstack([np.zeros(3), np.cumsum(pts, axis=0)])
        lo = np.arange(m) - half_window
        hi = np.arange(m) + half_window + 1
        interior = (lo >= 0) & (hi <= m)
        ii = np.nonzero(interior)[0]
        window_sum = csum[hi[ii]] - csum[lo[ii]]
        diff = (2 * half_window) * pts[ii] - (window_sum - pts[ii])
        ranges = np.linalg.norm(pts[ii], axis=1)
        ranges = np.maximum(ranges, 1e-12)
        curv[idx[ii]] = np.linalg.norm(diff, axis=1) / (2 * half_window * ranges)
    return curv


def extract_features(scan: Scan, config: FeatureConfig | None = None) -> FeatureSet:
    """Select edge and planar features per ring with angular-sector spreading.

    Each ring is split into `sectors` contiguous chunks; within a sector the
    highest-curvature points above the edge threshold become edges and the
    lowest-curvature points below the planar threshold become planar, capped
    per sector and per ring. Deterministic for a fixed scan and config.
    """
    cfg = config or FeatureConfig()
    curv = compute_curvature(scan, cfg.half_window)

    sel_pos: list[np.ndarray] = []
    sel_kind: list[int] = []
    sel_curv: list[float] = []
    sector_cap_e = max(1, -(-cfg.edge_per_ring // cfg.sectors))
    sector_cap_p = max(1, -(-cfg.planar_per_ring // cfg.sectors))

    for ring in np.unique(scan.ring):
        idx = np.nonzero(scan.ring == ring)[0]
        ring_e = 0
        ring_p = 0
        bounds = np.linspace(0, idx.size, cfg.sectors + 1).astype(int)
        for s in range(cfg.sectors):
            seg = idx[bounds[s]:bounds[s + 1]]
            if seg.size == 0:
                continue
            c = curv[seg]
            finite = np.isfinite(c)
            order = np.argsort(c, kind="stable")
            # planar: ascending curvature
            got = 0
            for j in order:
                if not finite[j] or c[j] > cfg.planar_threshold:
                    break
                if got >= sector_cap_p or ring_p >= cfg.planar_per_ring:
                    break
                sel_pos.append(scan.xyz[seg[j]])
                sel_kind.append(KIND_PLANAR)
                sel_curv.append(float(c[j]))
                got += 1
                ring_p += 1
            # edge: descending curvature
            got = 0
            for j in order[::-1]:
                if not finite[j]:
                    continue
                if c[j] < cfg.edge_threshold:
                    break
                if got >= sector_cap_e or ring_e >= cfg.edge_per_ring:
                    break
                sel_pos.append(scan.xyz[seg[j]])
                sel_kind.append(KIND_EDGE)
                sel_curv.append(float(c[j]))
                got += 1
                ring_e += 1

    if not sel_pos:
        return FeatureSet(np.empty((0, 3)), np.empty(0, dtype=np.int8), np.empty(0),
                          scan.timestamp)
    return FeatureSet(
        np.asarray(sel_pos), np.asarray(sel_kind, dtype=np.int8), np.asarray(sel_curv),
        scan.timestamp,
    )


def voxel_downsample(points: np.ndarray, resolution: float) -> np.ndarray:
    """Reduce points to one centroid per occupied voxel.

    Output rows are ordered by lexicographic voxel index, so the result is
    deterministic regardless of input order.
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if pts.shape[0] == 0:
        return pts.copy()
    cells = np.floor(pts / resolution).astype(np.int64)
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    cells_sorted = cells[order]
    pts_sorted = pts[order]
    new_cell = np.any(np.diff(cells_sorted, axis=0) != 0, axis=1)
    starts = np.concatenate([[0], np.nonzero(new_cell)[0] + 1])
    sums = np.add.reduceat(pts_sorted, starts, axis=0)
    counts = np.diff(np.concatenate([starts, [pts.shape[0]]]))
    return sums / counts[:, None]


def downsample_feature_set(fset: FeatureSet, voxel_edge: float, voxel_planar: float) -> FeatureSet:
    """Voxel-filter edges and planars separately; curvature becomes the voxel mean.

    A non-positive resolution disables filtering for that class.
    """
    pos_parts, kind_parts, curv_parts = [], [], []
    for kind, res in ((KIND_PLANAR, voxel_planar), (KIND_EDGE, voxel_edge)):
        mask = fset.kinds == kind
        if not mask.any():
            continue
        pts = fset.positions[mask]
        cv = fset.curvatures[mask]
        if res and res > 0:
            # same grouping as voxel_downsample, carrying curvature along
            cells = np.floor(pts / res).astype(np.int64)
            order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
            cells_sorted = cells[order]
            new_cell = np.any(np.diff(cells_sorted, axis=0) != 0, axis=1)
            starts = np.concatenate([[0], np.nonzero(new_cell)[0] + 1])
            counts = np.diff(np.concatenate([starts, [pts.shape[0]]]))
            pts = np.add.reduceat(pts[order], starts, axis=0) / counts[:, None]
            cv = np.add.reduceat(cv[order], starts) / counts
        pos_parts.append(pts)
        kind_parts.append(np.full(pts.shape[0], kind, dtype=np.int8))
        curv_parts.append(cv)
    if not pos_parts:
        return FeatureSet(np.empty((0, 3)), np.empty(0, dtype=np.int8), np.empty(0),
                          fset.frame_timestamp)
    return FeatureSet(
        np.concatenate(pos_parts), np.concatenate(kind_parts), np.concatenate(curv_parts),
        fset.frame_timestamp,
    )
