"""Online degeneracy evaluation and adaptive selection budget.

The degeneracy factor is the log-determinant of the information matrix
accumulated over the *full* candidate set (plus prior). Low values indicate
under-constrained geometry (corridors, flat open ground), in which case the
selection ratio is raised so the pose stays observable; well-conditioned
frames keep the small low-latency budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scanreg.selector import CandidatePool, MatchContext, metric_eval


@dataclass
class DegeneracyConfig:
    lambda_th: float = 42.0
    low_ratio: float = 0.2
    high_ratio: float = 0.8
    interval_frames: int = 10
    adaptive: bool = False

    def __post_init__(self):
        if self.interval_frames < 1:
            raise ValueError("interval_frames must be >= 1")


@dataclass
class DegeneracyReport:
    factor: float
    lambda_threshold: float
    ratio_applied: float
    evaluated_at_frame: int
    matched_count: int = 0


def degeneracy_factor(candidates, context: MatchContext | None = None,
                      prior_scale: float = 1e-3) -> tuple[float, int]:
    """logdet of the information matrix over every matched candidate.

    Matches all candidates (batch), accumulates their blocks in index order
    on top of the prior, and returns (factor, matched_count). With zero
    matches the factor degrades to the prior's logdet.
    """
    if isinstance(candidates, CandidatePool):
        pool = candidates
    else:
        pool = CandidatePool.from_candidates(list(candidates))
    n = len(pool)
    if n == 0:
        return metric_eval("logdet", prior_scale * np.eye(6)), 0
    if context is not None:
        pool.ensure_matched(np.arange(n, dtype=np.int64), context)
    lam = prior_scale * np.eye(6)
    ok_rows = np.nonzero(pool.ok)[0]
    if ok_rows.size:
        lam = lam + pool.lam[ok_rows].sum(axis=0)
    return metric_eval("logdet", lam), int(ok_rows.size)


def adaptive_ratio(factor: float, cfg: DegeneracyConfig) -> float:
    """Selection ratio for the given degeneracy factor (threshold inclusive
    on the well-conditioned side)."""
    return cfg.low_ratio if factor >= cfg.lambda_th else cfg.high_ratio


def schedule_evaluation(frame_index: int, interval_frames: int) -> bool:
    """True on frames where the factor should be re-evaluated."""
    if interval_frames < 1:
        raise ValueError("interval_frames must be >= 1")
    return frame_index % interval_frames == 0
