"""Trajectory accuracy metrics and selection-quality statistics.

ATE rigidly aligns the estimated positions to ground truth (closed-form
least squares, scale fixed at 1) and reports the RMSE of the residual
translations plus the geodesic rotation RMSE. RPE compares relative motions
over a fixed frame gap, quantifying local drift. Selection statistics
aggregate per-frame log-det values into a mean +/- std table keyed by
sequence and method.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from scanreg.cloud_io import TrajectoryRecord
from scanreg.geometry import Pose, compose, inverse, relative, rotation_angle


@dataclass
class AteReport:
    rmse_translation: float
    rmse_rotation_deg: float
    alignment: Pose
    n_pairs: int
    per_pair_errors: np.ndarray = field(repr=False, default=None)


@dataclass
class RpeReport:
    delta_frames: int
    mean_translation: float
    median_translation: float
    rmse_translation: float
    mean_rotation_deg: float
    median_rotation_deg: float
    rmse_rotation_deg: float
    n_pairs: int


def associate(estimated: list[TrajectoryRecord], ground_truth: list[TrajectoryRecord],
              max_dt: float = 0.05) -> list[tuple[TrajectoryRecord, TrajectoryRecord]]:
    """Pair records by nearest timestamp within max_dt seconds."""
    gt_times = np.array([r.timestamp for r in ground_truth])
    pairs = []
    for est in estimated:
        j = int(np.searchsorted(gt_times, est.timestamp))
        best = None
        for k in (j - 1, j):
            if 0 <= k < len(ground_truth):
                dt = abs(gt_times[k] - est.timestamp)
                if dt <= max_dt and (best is None or dt < best[0]):
                    best = (dt, k)
        if best is not None:
            pairs.append((est, ground_truth[best[1]]))
    return pairs


def umeyama_alignment(source: np.ndarray, target: np.ndarray,
                      yaw_only: bool = False) -> Pose:
    """Rigid transform (R, t) minimizing sum ||R s_i + t - t_i||^2, scale = 1.

    With yaw_only=True the rotation is constrained to the z axis (planar
    ground truth).
    """
    src = np.asarray(source, dtype=float)
    tgt = np.asarray(target, dtype=float)
    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    if yaw_only:
        ds = src[:, :2] - mu_s[:2]
        dt = tgt[:, :2] - mu_t[:2]
        num = np.sum(ds[:, 0] * dt[:, 1] - ds[:, 1] * dt[:, 0])
        den = np.sum(ds[:, 0] * dt[:, 0] + ds[:, 1] * dt[:, 1])
        yaw = float(np.arctan2(num, den))
        rot = Rotation.from_rotvec([0.0, 0.0, yaw]).as_matrix()
    else:
        cov = (tgt - mu_t).T @ (src - mu_s)
        u, _, vt = np.linalg.svd(cov)
        s = np.eye(3)
        if np.linalg.det(u @ vt) < 0:
            s[2, 2] = -1.0
        rot = u @ s @ vt
    trans = mu_t - rot @ mu_s
    return Pose.from_rotation_translation(rot, trans)


def ate(estimated: list[TrajectoryRecord], ground_truth: list[TrajectoryRecord],
        max_dt: float = 0.05, yaw_only: bool = False) -> AteReport:
    """Absolute trajectory error after rigid alignment."""
    pairs = associate(estimated, ground_truth, max_dt)
    if len(pairs) < 2:
        raise ValueError("need at least two associable pose pairs")
    est_pos = np.array([p[0].pose.trans for p in pairs])
    gt_pos = np.array([p[1].pose.trans for p in pairs])
    align = umeyama_alignment(est_pos, gt_pos, yaw_only=yaw_only)
    rot = align.rotation_matrix()
    resid = est_pos @ rot.T + align.trans - gt_pos
    errs = np.linalg.norm(resid, axis=1)
    rmse_t = float(np.sqrt(np.mean(errs**2)))

    rot_errs = []
    for est, gt in pairs:
        r_est = compose(align, est.pose)
        rot_errs.append(rotation_angle(relative(gt.pose, r_est)))
    rot_errs = np.degrees(rot_errs)
    rmse_r = float(np.sqrt(np.mean(rot_errs**2)))
    return AteReport(rmse_t, rmse_r, align, len(pairs), errs)


def rpe(estimated: list[TrajectoryRecord], ground_truth: list[TrajectoryRecord],
        delta_frames: int = 1, max_dt: float = 0.05) -> RpeReport:
    """Relative pose error over a frame gap."""
    pairs = associate(estimated, ground_truth, max_dt)
    if delta_frames < 1 or delta_frames >= len(pairs):
        raise ValueError("delta_frames must be in [1, number of pairs)")
    t_errs = []
    r_errs = []
    for i in range(len(pairs) - delta_frames):
        est_rel = relative(pairs[i][0].pose, pairs[i + delta_frames][0].pose)
        gt_rel = relative(pairs[i][1].pose, pairs[i + delta_frames][1].pose)
        err = compose(inverse(gt_rel), est_rel)
        t_errs.append(np.linalg.norm(err.trans))
        r_errs.append(rotation_angle(err))
    t_errs = np.asarray(t_errs)
    r_errs = np.degrees(r_errs)
    return RpeReport(
        delta_frames=delta_frames,
        mean_translation=float(t_errs.mean()),
        median_translation=float(np.median(t_errs)),
        rmse_translation=float(np.sqrt(np.mean(t_errs**2))),
        mean_rotation_deg=float(r_errs.mean()),
        median_rotation_deg=float(np.median(r_errs)),
        rmse_rotation_deg=float(np.sqrt(np.mean(r_errs**2))),
        n_pairs=len(t_errs),
    )


def selection_report(per_frame_values: dict) -> dict:
    """Aggregate per-frame metric values into mean/std cells.

    Input maps sequence name -> method name -> iterable of per-frame values;
    output mirrors the layout with {"mean": m, "std": s, "n": k} cells plus a
    rendered "mean+/-std" string per cell (population std).
    """
    table = {}
    for sequence, methods in per_frame_values.items():
        row = {}
        for method, values in methods.items():
            arr = np.asarray(list(values), dtype=float)
            if arr.size == 0:
                raise ValueError(f"no samples for {sequence}/{method}")
            mean = float(arr.mean())
            std = float(arr.std())
            row[method] = {
                "mean": mean,
                "std": std,
                "n": int(arr.size),
                "cell": f"{mean:.1f}±{std:.1f}",
            }
        table[sequence] = row
    return table


def render_selection_table(table: dict, methods: tuple = ("greedy", "rnd", "full")) -> str:
    """Plain-text table: rows are sequences, columns the selection methods."""
    header = ["sequence"] + list(methods)
    lines = ["\t".join(header)]
    for sequence in table:
        cells = [sequence]
        for method in methods:
            cell = table[sequence].get(method)
            cells.append(cell["cell"] if cell else "-")
        lines.append("\t".join(cells))
    return "\n".join(lines)
