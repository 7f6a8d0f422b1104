"""Scoring and validation metrics: inlier RMSE, directional coverage, S@tau, TRE, LMCE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import total_ordering
from typing import Sequence

import numpy as np

from .core import NeighborIndex, PointCloud, RigidTransform

R_EVAL = 2.0
R_COV = 1.0
MIN_INLIERS = 50

GROUND_TO_AERIAL = "ground->aerial"
AERIAL_TO_GROUND = "aerial->ground"


@total_ordering
@dataclass(frozen=True)
class InlierScore:
    """Forward-direction inlier RMSE. ``rmse`` is +inf when fewer than 50 inliers exist.

    Scores order by rmse alone, so ``inf`` sorts after every finite value.
    """

    rmse: float
    inlier_count: int
    r_eval: float = R_EVAL

    def __post_init__(self):
        if self.rmse < 0 or math.isnan(self.rmse):
            raise ValueError(f"invalid rmse {self.rmse}")
        if math.isfinite(self.rmse) and self.inlier_count < MIN_INLIERS:
            raise ValueError("finite rmse requires at least 50 inliers")

    def __lt__(self, other: InlierScore) -> bool:
        return self.rmse < other.rmse

    def __eq__(self, other) -> bool:
        if not isinstance(other, InlierScore):
            return NotImplemented
        return self.rmse == other.rmse

    def __hash__(self):
        return hash(self.rmse)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.rmse)

    @classmethod
    def failed(cls, r_eval: float = R_EVAL) -> InlierScore:
        return cls(math.inf, 0, r_eval)


def nn_distances(S: PointCloud | np.ndarray, idxA: NeighborIndex, T: RigidTransform, max_distance=np.inf) -> np.ndarray:
    pts = S.points if isinstance(S, PointCloud) else np.asarray(S)
    d, _ = idxA.query(T.apply_points(pts), max_distance=max_distance)
    return d


def inlier_rmse(S: PointCloud, idxA: NeighborIndex, T: RigidTransform, r_eval: float = R_EVAL) -> InlierScore:
    """Root-mean-square NN distance over source points whose NN lies within ``r_eval`` (closed ball)."""
    if r_eval <= 0:
        raise ValueError("r_eval must be positive")
    # query a hair beyond r_eval so points at exactly r_eval are kept, then filter with <=
    d = nn_distances(S, idxA, T, max_distance=np.nextafter(r_eval, np.inf))
    inl = d[d <= r_eval]
    n = int(inl.size)
    if n < MIN_INLIERS:
        return InlierScore(math.inf, n, r_eval)
    return InlierScore(float(np.sqrt(np.mean(inl * inl))), n, r_eval)


@dataclass(frozen=True)
class CoverageStat:
    direction: str
    fraction: float
    radius: float

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("coverage fraction must lie in [0, 1]")


def coverage(src: PointCloud, idx_dst: NeighborIndex, T: RigidTransform, r_cov: float = R_COV,
             direction: str = GROUND_TO_AERIAL) -> CoverageStat:
    """Fraction of source points (after T) whose nearest destination point lies within r_cov."""
    if r_cov <= 0:
        raise ValueError("r_cov must be positive")
    d = nn_distances(src, idx_dst, T, max_distance=np.nextafter(r_cov, np.inf))
    return CoverageStat(direction, float(np.count_nonzero(d <= r_cov)) / len(src), r_cov)


def directional_coverage(S: PointCloud, A: PointCloud, T_ref: RigidTransform,
                         r_cov: float = R_COV) -> tuple[CoverageStat, CoverageStat]:
    """(ground->aerial, aerial->ground) coverage of a pair under T_ref."""
    g2a = coverage(S, A.index, T_ref, r_cov, GROUND_TO_AERIAL)
    a2g = coverage(A, S.index, T_ref.inverse(), r_cov, AERIAL_TO_GROUND)
    return g2a, a2g


def success_at(scores: Sequence[InlierScore | float], tau: float) -> float:
    """Fraction of scores with rmse strictly below tau; infinite scores never count."""
    vals = [s.rmse if isinstance(s, InlierScore) else float(s) for s in scores]
    if not vals:
        return 0.0
    return sum(1 for v in vals if v < tau) / len(vals)


@dataclass(frozen=True)
class SurveyMarkers:
    """Marker positions in the aerial frame and the same markers expressed in the scan frame."""

    aerial: np.ndarray
    scan: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.aerial, dtype=np.float64).reshape(-1, 3)
        s = np.asarray(self.scan, dtype=np.float64).reshape(-1, 3)
        if a.shape != s.shape:
            raise ValueError("marker lists differ in length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(s))):
            raise ValueError("non-finite marker coordinates")
        object.__setattr__(self, "aerial", a)
        object.__setattr__(self, "scan", s)

    def __len__(self) -> int:
        return len(self.aerial)


def median_lower_mid(values) -> float:
    """Median; for even counts the average of the two central order statistics."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = len(v)
    if n == 0:
        raise ValueError("median of empty sequence")
    mid = n // 2
    if n % 2:
        return float(v[mid])
    return float(0.5 * (v[mid - 1] + v[mid]))


def tre(T_est: RigidTransform, markers: SurveyMarkers) -> float:
    """Translation recovery error: median marker displacement under T_est."""
    if len(markers) == 0:
        raise ValueError("TRE needs at least one marker")
    d = np.linalg.norm(T_est.apply_points(markers.scan) - markers.aerial, axis=1)
    return median_lower_mid(d)


def lmce(refined: Sequence[RigidTransform], odometry: Sequence[RigidTransform]) -> np.ndarray:
    """Per-step local motion consistency error between refined poses and odometry poses."""
    if len(refined) != len(odometry):
        raise ValueError(f"pose sequences differ in length: {len(refined)} vs {len(odometry)}")
    if len(refined) < 2:
        raise ValueError("LMCE needs at least two poses")
    out = np.empty(len(refined) - 1)
    for i in range(len(refined) - 1):
        rel_t = (refined[i].inverse() @ refined[i + 1]).translation
        rel_o = (odometry[i].inverse() @ odometry[i + 1]).translation
        out[i] = np.linalg.norm(rel_t - rel_o)
    return out
