"""Point-to-point ICP with a staged schedule of max-correspondence distances."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import EstimationError, NeighborIndex, PointCloud, RigidTransform, estimate_rigid
from .metrics import R_EVAL, InlierScore, inlier_rmse

log = logging.getLogger(__name__)

CTF_THRESHOLDS = (5.0, 3.0, 2.0, 1.5, 1.0)
ITERATIONS_PER_STAGE = 50
STOP_ROTATION = 1e-7
STOP_TRANSLATION = 1e-7


@dataclass(frozen=True)
class StageSchedule:
    thresholds: tuple = CTF_THRESHOLDS
    iterations_per_stage: int = ITERATIONS_PER_STAGE

    def __post_init__(self):
        th = tuple(float(x) for x in self.thresholds)
        if not th:
            raise ValueError("schedule needs at least one threshold")
        if any(x <= 0 for x in th):
            raise ValueError("thresholds must be strictly positive")
        if self.iterations_per_stage < 1:
            raise ValueError("iterations_per_stage must be >= 1")
        object.__setattr__(self, "thresholds", th)


CTF_SCHEDULE = StageSchedule()


@dataclass
class StageResult:
    transform: RigidTransform
    iterations: int = 0
    flagged: bool = False
    converged: bool = False
    # (mse before update, mse after update) at fixed correspondences, one entry per iteration
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class IcpOutcome:
    transform: RigidTransform
    score: InlierScore
    converged_stages: int
    flagged: bool = False


def icp_stage(src: PointCloud | np.ndarray, idx_dst: NeighborIndex, T0: RigidTransform,
              max_corr: float, iters: int = ITERATIONS_PER_STAGE) -> StageResult:
    """Run up to ``iters`` point-to-point ICP iterations with a fixed correspondence gate.

    Each iteration re-matches every source point against the prebuilt index and solves the
    closed-form alignment from the original source coordinates, so the returned transform is
    always a fresh SVD solution rather than an accumulated product.
    """
    if max_corr <= 0:
        raise ValueError("max_corr must be positive")
    pts = src.points if isinstance(src, PointCloud) else np.asarray(src, dtype=np.float64)
    dst = idx_dst.points
    T = T0
    res = StageResult(T0)
    for it in range(iters):
        d, j = idx_dst.query(T.apply_points(pts), max_distance=max_corr)
        keep = np.isfinite(d)
        if np.count_nonzero(keep) < 3:
            res.flagged = True
            break
        s, t = pts[keep], dst[j[keep]]
        try:
            T_new = estimate_rigid(s, t)
        except EstimationError:
            res.flagged = True
            break
        before = float(np.mean(d[keep] ** 2))
        after = float(np.mean(np.sum((T_new.apply_points(s) - t) ** 2, axis=1)))
        res.history.append((before, after))
        step = T.inverse() @ T_new
        T = T_new
        res.iterations = it + 1
        if step.rotation_angle() < STOP_ROTATION and np.linalg.norm(step.translation) < STOP_TRANSLATION:
            res.converged = True
            break
    res.transform = T
    return res


def run_schedule(src, idx_dst: NeighborIndex, T0: RigidTransform, thresholds: Sequence[float],
                 iters: int = ITERATIONS_PER_STAGE) -> tuple[RigidTransform, int, bool]:
    """Chain icp_stage over ``thresholds``; returns (transform, converged stage count, any flag)."""
    T = T0
    converged = 0
    flagged = False
    for th in thresholds:
        r = icp_stage(src, idx_dst, T, th, iters)
        T = r.transform
        flagged |= r.flagged
        converged += int(r.converged)
    return T, converged, flagged


def ctf(src: PointCloud, idx_dst: NeighborIndex, T0: RigidTransform, sched: StageSchedule = CTF_SCHEDULE,
        r_eval: float = R_EVAL, score_cloud: PointCloud | None = None) -> IcpOutcome:
    """Coarse-to-fine ICP; the score is the forward inlier RMSE on ``score_cloud`` (default: src)."""
    T, conv, flagged = run_schedule(src, idx_dst, T0, sched.thresholds, sched.iterations_per_stage)
    score = inlier_rmse(score_cloud if score_cloud is not None else src, idx_dst, T, r_eval)
    return IcpOutcome(T, score, conv, flagged)
