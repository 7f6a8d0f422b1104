"""Geometric primitives: point clouds, rigid transforms and exact nearest-neighbour search."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

ORTHO_TOL = 1e-9


class EstimationError(ValueError):
    """Raised when a rigid transform cannot be estimated from the given correspondences."""


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array of points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unordered set of 3D points in meters, tagged with the frame it lives in."""

    points: np.ndarray
    frame: str = "scan"

    def __post_init__(self):
        pts = _as_points(self.points)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def index(self) -> NeighborIndex:
        return NeighborIndex(self)

    def subset(self, mask_or_idx) -> PointCloud:
        return PointCloud(self.points[mask_or_idx], self.frame)

    def with_frame(self, frame: str) -> PointCloud:
        return PointCloud(self.points, frame)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) pose stored as rotation matrix + translation; maps p to R p + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform contains non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, t) -> RigidTransform:
        return cls(np.eye(3), t)

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(rot_z(yaw), translation)

    @classmethod
    def from_euler(cls, roll: float, pitch: float, yaw: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Z-Y-X (yaw, pitch, roll) convention: R = Rz(yaw) Ry(pitch) Rx(roll)."""
        return cls(rot_z(yaw) @ rot_y(pitch) @ rot_x(roll), translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply_points(self, points) -> np.ndarray:
        return _as_points(points) @ self.rotation.T + self.translation

    def inverse(self) -> RigidTransform:
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return RigidTransform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def rotation_angle(self) -> float:
        """Geodesic angle of the rotation part, in radians."""
        return rotation_angle(self.rotation)

    def is_valid(self, tol: float = ORTHO_TOL) -> bool:
        R = self.rotation
        return bool(np.max(np.abs(R.T @ R - np.eye(3))) <= tol and abs(np.linalg.det(R) - 1.0) <= tol)

    def orthonormalized(self) -> RigidTransform:
        U, _, Vt = np.linalg.svd(self.rotation)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] *= -1
            R = U @ Vt
        return RigidTransform(R, self.translation)

    def __repr__(self) -> str:
        return f"RigidTransform(yaw={np.degrees(self.yaw):.3f} deg, t={np.round(self.translation, 4).tolist()})"


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(R: np.ndarray) -> float:
    cos = (np.trace(R) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return a after b, i.e. p -> a(b(p))."""
    return a @ b


def compose_chain(transforms) -> RigidTransform:
    """Compose left to right, re-orthonormalizing every 100 factors."""
    out = RigidTransform.identity()
    for k, t in enumerate(transforms, start=1):
        out = out @ t
        if k % 100 == 0:
            out = out.orthonormalized()
    return out


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def apply(t: RigidTransform, cloud: PointCloud, frame: str | None = None) -> PointCloud:
    return PointCloud(t.apply_points(cloud.points), cloud.frame if frame is None else frame)


def transform_delta(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """Rotation angle (rad) and translation norm (m) of a^-1 b."""
    d = a.inverse() @ b
    return d.rotation_angle(), float(np.linalg.norm(d.translation))


class NeighborIndex:
    """Exact k-d tree over a point cloud; read-only after construction."""

    def __init__(self, cloud: PointCloud | np.ndarray):
        pts = cloud.points if isinstance(cloud, PointCloud) else _as_points(cloud)
        if len(pts) == 0:
            raise ValueError("cannot build a neighbour index over an empty cloud")
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, points, max_distance: float = np.inf) -> tuple[np.ndarray, np.ndarray]:
        """Nearest-neighbour distances and indices for each query point.

        Points farther than ``max_distance`` get distance ``inf`` and index ``len(self)``.
        """
        pts = _as_points(points)
        if np.isfinite(max_distance):
            return self._tree.query(pts, k=1, distance_upper_bound=max_distance)
        return self._tree.query(pts, k=1)

    def query_radius(self, points, radius: float) -> list:
        return self._tree.query_ball_point(_as_points(points), r=radius)


def nearest(idx: NeighborIndex, p) -> tuple[np.ndarray, float]:
    d, i = idx.query(np.asarray(p, dtype=np.float64).reshape(1, 3))
    return idx.points[int(i[0])].copy(), float(d[0])


def estimate_rigid(src_pts, dst_pts) -> RigidTransform:
    """Closed-form least-squares rigid alignment (SVD / Kabsch with reflection correction).

    Returns T minimizing sum ||T src_i - dst_i||^2.
    """
    src = _as_points(src_pts)
    dst = _as_points(dst_pts)
    if src.shape != dst.shape:
        raise EstimationError(f"correspondence arrays differ in shape: {src.shape} vs {dst.shape}")
    if len(src) < 3:
        raise EstimationError(f"need at least 3 correspondences, got {len(src)}")
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    src_c = src - mu_s
    dst_c = dst - mu_d
    sv = np.linalg.svd(src_c, compute_uv=False)
    if sv[0] == 0.0 or sv[1] <= 1e-9 * sv[0]:
        raise EstimationError("degenerate (collinear or coincident) correspondence configuration")
    H = src_c.T @ dst_c
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    t = mu_d - R @ mu_s
    return RigidTransform(R, t)
