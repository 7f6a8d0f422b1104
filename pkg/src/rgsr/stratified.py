"""Height-percentile subsets and Two-Stage (ground-plane first) ICP in both directions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PointCloud, RigidTransform
from .icp import CTF_SCHEDULE, ITERATIONS_PER_STAGE, IcpOutcome, StageSchedule, ctf, run_schedule
from .metrics import R_EVAL, inlier_rmse

AERIAL_FRAME_VIA_INIT = "aerial-frame-via-T_init"
NATIVE_Z = "native-z"

COARSE_THRESHOLDS = (5.0, 3.0, 2.0)
FINE_THRESHOLDS = (2.0, 1.5, 1.0)


@dataclass(frozen=True)
class PercentileSpec:
    p: float = 30.0
    frame: str = AERIAL_FRAME_VIA_INIT

    def __post_init__(self):
        if not 0 < self.p <= 100:
            raise ValueError(f"percentile must lie in (0, 100], got {self.p}")
        if self.frame not in (AERIAL_FRAME_VIA_INIT, NATIVE_Z):
            raise ValueError(f"unknown percentile frame {self.frame!r}")


@dataclass(frozen=True)
class TwoStageConfig:
    coarse_schedule: tuple = COARSE_THRESHOLDS
    fine_schedule: tuple = FINE_THRESHOLDS
    percentile: PercentileSpec = PercentileSpec()
    iterations_per_stage: int = ITERATIONS_PER_STAGE


def nearest_rank_quantile(values: np.ndarray, p: float) -> float:
    """The ceil(p/100 * n)-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=np.float64), kind="stable")
    k = max(1, math.ceil(p / 100.0 * len(v)))
    return float(v[min(k, len(v)) - 1])


def height_subset_mask(heights, p: float) -> np.ndarray:
    h = np.asarray(heights, dtype=np.float64)
    if not 0 < p <= 100:
        raise ValueError(f"percentile must lie in (0, 100], got {p}")
    if len(h) == 0:
        raise ValueError("empty height list")
    return h <= nearest_rank_quantile(h, p)


def height_subset(cloud: PointCloud, heights, p: float) -> PointCloud:
    """Points whose height is <= the nearest-rank p-th percentile height (ties included)."""
    if len(heights) != len(cloud):
        raise ValueError("heights must match the cloud length")
    return cloud.subset(height_subset_mask(heights, p))


def two_stage(S: PointCloud, A: PointCloud, T0: RigidTransform, cfg: TwoStageConfig = TwoStageConfig(),
              r_eval: float = R_EVAL) -> IcpOutcome:
    """Coarse ICP on the lowest-p height subset of S, then fine ICP on all of S.

    Heights are taken once as z of T0 applied to S, unless ``cfg.percentile.frame`` is native-z.
    The target A is never restricted. Score is the forward RMSE on the full S.
    """
    idxA = A.index
    if cfg.percentile.frame == NATIVE_Z:
        heights = S.points[:, 2]
    else:
        heights = T0.apply_points(S.points)[:, 2]
    sub = height_subset(S, heights, cfg.percentile.p)
    T, c1, f1 = run_schedule(sub, idxA, T0, cfg.coarse_schedule, cfg.iterations_per_stage)
    T, c2, f2 = run_schedule(S, idxA, T, cfg.fine_schedule, cfg.iterations_per_stage)
    return IcpOutcome(T, inlier_rmse(S, idxA, T, r_eval), c1 + c2, f1 or f2)


def two_stage_reverse(S: PointCloud, A: PointCloud, T0: RigidTransform, p: float = 30.0,
                      refine: StageSchedule = CTF_SCHEDULE, r_eval: float = R_EVAL) -> IcpOutcome:
    """Two-Stage with A as source (native-z percentiles), inverted, then forward CTF.

    The reverse run is seeded from T0^-1 and its output T_{A->S} is inverted back into an
    S->A hypothesis; scoring is always forward on the full ground cloud.
    """
    cfg = TwoStageConfig(percentile=PercentileSpec(p, NATIVE_Z), iterations_per_stage=refine.iterations_per_stage)
    rev = two_stage(A, S, T0.inverse(), cfg, r_eval)
    fwd = ctf(S, A.index, rev.transform.inverse(), refine, r_eval)
    return IcpOutcome(fwd.transform, fwd.score, rev.converged_stages + fwd.converged_stages,
                      rev.flagged or fwd.flagged)
