"""Scan pairing (50 m aerial crops), jitter protocols, markers and odometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..core import PointCloud, RigidTransform, rot_z
from ..metrics import SurveyMarkers
from .scene import SceneError, WorldModel, building_corner_markers, crop_xy, generate_scene, path_poses, \
    simulate_ground_scan

CROP_RADIUS = 50.0
PROTOCOL_A = "A"
PROTOCOL_B = "B"
ODOM_SIGMA = 0.02
MIN_MARKERS = 4


@dataclass(frozen=True)
class JitterSpec:
    xy_range: float = 5.0
    yaw_range: float = math.radians(15.0)
    seed: int = 42
    protocol: str = PROTOCOL_B

    def __post_init__(self):
        if self.protocol not in (PROTOCOL_A, PROTOCOL_B):
            raise ValueError(f"unknown protocol {self.protocol!r}")

    def draw(self, scan_index: int) -> tuple[float, float, float]:
        """(dx, dy, dyaw) for one scan; independent uniform draws from a per-scan stream."""
        if self.protocol == PROTOCOL_A:
            return 0.0, 0.0, 0.0
        rng = np.random.default_rng([self.seed, scan_index])
        dx, dy = rng.uniform(-self.xy_range, self.xy_range, 2)
        dyaw = rng.uniform(-self.yaw_range, self.yaw_range)
        return float(dx), float(dy), float(dyaw)

    def apply(self, T_ref: RigidTransform, scan_index: int) -> RigidTransform:
        """Perturb planar position and heading; z, roll and pitch stay as in T_ref."""
        if self.protocol == PROTOCOL_A:
            return T_ref
        dx, dy, dyaw = self.draw(scan_index)
        return RigidTransform(rot_z(dyaw) @ T_ref.rotation, T_ref.translation + (dx, dy, 0.0))


@dataclass(eq=False)
class ScanPair:
    scan_id: int
    S: PointCloud
    A: PointCloud
    T_ref: RigidTransform
    T_init: RigidTransform
    markers: SurveyMarkers
    odom_pose: RigidTransform
    site: str = "site"
    trajectory: str = "traj0"
    seed: int = 0
    meta: dict = field(default_factory=dict)


def sample_markers(world: WorldModel, T_ref: RigidTransform, rng, radius: float = CROP_RADIUS) -> SurveyMarkers:
    """Building base corners inside the crop, topped up with terrain control points to at least 4."""
    c = T_ref.translation[:2]
    pts = building_corner_markers(world, c, radius)
    need = MIN_MARKERS - len(pts)
    if need > 0:
        extra = []
        while len(extra) < need:
            r = radius * math.sqrt(rng.uniform(0.05, 0.6))
            a = rng.uniform(0, 2 * math.pi)
            xy = c + (r * math.cos(a), r * math.sin(a))
            if not world.inside_building(xy[None])[0]:
                extra.append([xy[0], xy[1], float(world.terrain_z(xy))])
        pts = np.vstack([pts, np.array(extra)])
    return SurveyMarkers(pts, T_ref.inverse().apply_points(pts))


def odometry_chain(poses, seed: int, sigma: float = ODOM_SIGMA, first_index: int = 0) -> list:
    """Dead-reckoned poses: true relative motions with per-step translation noise."""
    out = [poses[0]]
    for i in range(1, len(poses)):
        rng = np.random.default_rng([seed, first_index + i, 0x0D0])
        rel = poses[i - 1].inverse() @ poses[i]
        noise = RigidTransform.from_translation(rng.normal(0, sigma, 3))
        out.append(out[-1] @ rel @ noise)
    return out


def make_pair(world: WorldModel, pose: RigidTransform, jitter: JitterSpec, scan_index: int = 0,
              odom_pose: RigidTransform | None = None, site: str = "site", trajectory: str = "traj0",
              crop_radius: float = CROP_RADIUS) -> ScanPair:
    """Simulate the ground scan at ``pose`` and pair it with the aerial crop around it."""
    if world.aerial is None:
        raise SceneError("world has no aerial cloud; build it with generate_scene")
    seed = world.spec.rng_seed
    rng = np.random.default_rng([seed, scan_index, 0x5CA7])
    S = simulate_ground_scan(world, pose, rng=rng)
    A = crop_xy(world.aerial, pose.translation[:2], crop_radius)
    if len(A) == 0:
        raise SceneError("empty aerial crop")
    markers = sample_markers(world, pose, rng, crop_radius)
    return ScanPair(
        scan_id=scan_index,
        S=S,
        A=A,
        T_ref=pose,
        T_init=jitter.apply(pose, scan_index),
        markers=markers,
        odom_pose=pose if odom_pose is None else odom_pose,
        site=site,
        trajectory=trajectory,
        seed=seed,
    )


def make_site_pairs(spec, jitter: JitterSpec, n_scans: int | None = None, first_index: int = 0,
                    site: str | None = None):
    """Generate one site (scene + trajectory) and all its pairs; scan ids start at ``first_index``."""
    _, world = generate_scene(spec)
    n = spec.n_scans if n_scans is None else n_scans
    poses = path_poses(world, n)
    odom = odometry_chain(poses, spec.rng_seed, first_index=first_index)
    name = site or f"{spec.name}-{spec.rng_seed}"
    pairs = [make_pair(world, p, jitter, first_index + k, odom[k], name, f"{name}/traj0") for k, p in enumerate(poses)]
    return world, pairs
