"""Analytic aerial/ground LiDAR scene model with top-down and line-of-sight visibility."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from ..core import PointCloud, RigidTransform

AERIAL_DENSITY_RANGE = (2.0, 8.0)


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class Building:
    cx: float
    cy: float
    hx: float  # half-size along local x
    hy: float
    yaw: float
    height: float
    base: float = 0.0

    def local_xy(self, xy: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        d = np.asarray(xy, dtype=np.float64)[..., :2] - (self.cx, self.cy)
        return np.stack([c * d[..., 0] + s * d[..., 1], -s * d[..., 0] + c * d[..., 1]], axis=-1)

    def contains(self, xy: np.ndarray, margin: float = 0.0) -> np.ndarray:
        loc = self.local_xy(xy)
        return (np.abs(loc[..., 0]) <= self.hx + margin) & (np.abs(loc[..., 1]) <= self.hy + margin)

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        loc = np.array([[-self.hx, -self.hy], [self.hx, -self.hy], [self.hx, self.hy], [-self.hx, self.hy]])
        return loc @ np.array([[c, -s], [s, c]]).T + (self.cx, self.cy)

    def blocks(self, origin_xy, pts_xy: np.ndarray, shrink: float = 1e-3) -> np.ndarray:
        """True where the 2D segment origin->point crosses this footprint (slab test)."""
        o = self.local_xy(np.asarray(origin_xy, dtype=np.float64))
        p = self.local_xy(pts_xy)
        d = p - o
        t0 = np.zeros(len(p))
        t1 = np.ones(len(p))
        for ax, h in ((0, self.hx - shrink), (1, self.hy - shrink)):
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (-h - o[ax]) / d[:, ax]
                tb = (h - o[ax]) / d[:, ax]
            par = d[:, ax] == 0
            lo = np.where(par, np.where(abs(o[ax]) <= h, -np.inf, np.inf), np.minimum(ta, tb))
            hi = np.where(par, np.where(abs(o[ax]) <= h, np.inf, -np.inf), np.maximum(ta, tb))
            t0 = np.maximum(t0, lo)
            t1 = np.minimum(t1, hi)
        return t0 < t1


@dataclass(frozen=True)
class Tree:
    cx: float
    cy: float
    radius: float
    crown_base: float  # above terrain
    crown_top: float
    trunk_radius: float = 0.25


@dataclass(frozen=True)
class SceneSpec:
    """Scene recipe. All lengths in meters, densities in points per square meter."""

    name: str = "campus"
    extent: float = 160.0  # square side, centered at the origin
    slope_x: float = 0.01
    slope_y: float = -0.005
    n_bumps: int = 12
    bump_amp: float = 1.5
    bump_sigma: float = 8.0
    n_buildings: int = 6
    building_size: tuple = (6.0, 14.0)  # half-size range
    building_height: tuple = (6.0, 18.0)
    n_trees: int = 10
    tree_radius: tuple = (2.5, 5.0)
    crown_base: tuple = (2.5, 4.0)
    crown_top: tuple = (7.0, 12.0)
    canopy_penetration: float = 0.15
    n_low: int = 60
    low_size: tuple = (0.8, 3.0)  # half-size range
    low_height: tuple = (0.6, 1.6)
    aerial_density: float = 2.0
    ground_terrain_density: float = 0.8
    ground_facade_density: float = 6.0
    ground_canopy_density: float = 4.0
    sensor_height: float = 1.8
    sensor_range: float = 60.0
    fov_up_deg: float = 22.5
    fov_down_deg: float = -22.5
    blind_radius: float = 2.0
    ground_noise: float = 0.03
    aerial_noise: float = 0.05
    path_radius: float = 35.0
    path_clearance: float = 6.0
    n_scans: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        if self.extent <= 0:
            raise SceneError("scene extent must be positive")
        lo, hi = AERIAL_DENSITY_RANGE
        if not lo <= self.aerial_density <= hi:
            raise SceneError(f"aerial density {self.aerial_density} outside [{lo}, {hi}] pts/m^2")
        for name in ("ground_terrain_density", "ground_facade_density", "ground_canopy_density",
                     "sensor_range", "sensor_height"):
            if getattr(self, name) <= 0:
                raise SceneError(f"{name} must be positive")

    def replace(self, **kw) -> SceneSpec:
        return SceneSpec(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **kw})


@dataclass(eq=False)
class WorldModel:
    spec: SceneSpec
    bumps: np.ndarray  # (k, 4): cx, cy, amplitude, sigma
    buildings: list
    trees: list
    low: list  # short boxes (cars, hedges, low walls) seen from above and from the ground
    path: np.ndarray  # (m, 2) closed polyline the sensor drives along
    aerial: PointCloud | None = None
    _aerial_index: object = field(default=None, repr=False)

    def terrain_z(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        z = self.spec.slope_x * xy[..., 0] + self.spec.slope_y * xy[..., 1]
        for cx, cy, amp, sig in self.bumps:
            z = z + amp * np.exp(-((xy[..., 0] - cx) ** 2 + (xy[..., 1] - cy) ** 2) / (2 * sig * sig))
        return z

    def inside_building(self, xy, margin: float = 0.0) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        out = np.zeros(len(xy), dtype=bool)
        for b in self.buildings:
            out |= b.contains(xy, margin)
        return out

    def inside_low(self, xy, margin: float = 0.0) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        out = np.zeros(len(xy), dtype=bool)
        for b in self.low:
            out |= b.contains(xy, margin)
        return out

    def under_canopy(self, xy) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
        out = np.zeros(len(xy), dtype=bool)
        for t in self.trees:
            out |= (xy[:, 0] - t.cx) ** 2 + (xy[:, 1] - t.cy) ** 2 <= t.radius ** 2
        return out

    def line_of_sight(self, origin_xy, pts_xy: np.ndarray, skip: int | None = None) -> np.ndarray:
        vis = np.ones(len(pts_xy), dtype=bool)
        for k, b in enumerate(self.buildings):
            if k == skip:
                continue
            vis &= ~b.blocks(origin_xy, pts_xy)
        return vis


def _uniform_in_square(rng, n, half):
    return rng.uniform(-half, half, size=(n, 2))


def _poisson_count(rng, mean: float) -> int:
    return int(rng.poisson(mean))


def _sample_path(spec: SceneSpec, rng) -> np.ndarray:
    """Closed, gently wobbling loop around the origin."""
    t = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    ph = rng.uniform(0, 2 * np.pi, 2)
    r = spec.path_radius * (1 + 0.15 * np.sin(2 * t + ph[0]) + 0.08 * np.sin(3 * t + ph[1]))
    return np.c_[r * np.cos(t), r * np.sin(t)]


def _dist_to_path(path: np.ndarray, xy: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(np.asarray(xy)[:, None, :2] - path[None], axis=2)
    return d.min(axis=1)


def build_world(spec: SceneSpec) -> WorldModel:
    rng = np.random.default_rng([spec.rng_seed, 0xC0FFEE])
    half = spec.extent / 2
    path = _sample_path(spec, rng)
    bumps = np.c_[
        _uniform_in_square(rng, spec.n_bumps, half),
        rng.uniform(-spec.bump_amp, spec.bump_amp, spec.n_bumps),
        rng.uniform(0.6, 1.4, spec.n_bumps) * spec.bump_sigma,
    ] if spec.n_bumps else np.zeros((0, 4))
    world = WorldModel(spec, bumps, [], [], [], path)

    buildings = []
    tries = 0
    while len(buildings) < spec.n_buildings and tries < 2000:
        tries += 1
        hx, hy = rng.uniform(*spec.building_size, 2)
        cand = Building(float(rng.uniform(-half + hx, half - hx)), float(rng.uniform(-half + hy, half - hy)),
                        float(hx), float(hy), float(rng.uniform(0, np.pi / 2)), float(rng.uniform(*spec.building_height)))
        corners = cand.corners()
        probe = np.vstack([corners, [[cand.cx, cand.cy]], (corners + np.roll(corners, 1, axis=0)) / 2])
        # keep the driving corridor clear and buildings apart
        if np.any(cand.contains(path, spec.path_clearance)):
            continue
        if any(np.any(b.contains(probe, 4.0)) or np.any(cand.contains(b.corners(), 4.0)) for b in buildings):
            continue
        base = float(world.terrain_z(np.array([cand.cx, cand.cy])))
        buildings.append(Building(cand.cx, cand.cy, cand.hx, cand.hy, cand.yaw, cand.height, base))
    world.buildings = buildings

    trees = []
    tries = 0
    while len(trees) < spec.n_trees and tries < 2000:
        tries += 1
        r = float(rng.uniform(*spec.tree_radius))
        c = rng.uniform(-half + r, half - r, 2)
        if _dist_to_path(path, c[None])[0] < 1.5:
            continue
        if world.inside_building(c[None], r + 1.0)[0]:
            continue
        if any(math.hypot(t.cx - c[0], t.cy - c[1]) < t.radius + r for t in trees):
            continue
        base = float(rng.uniform(*spec.crown_base))
        top = float(max(base + 2.0, rng.uniform(*spec.crown_top)))
        trees.append(Tree(float(c[0]), float(c[1]), r, base, top))
    world.trees = trees

    low = []
    tries = 0
    while len(low) < spec.n_low and tries < 5000:
        tries += 1
        hx, hy = rng.uniform(*spec.low_size, 2)
        cand = Building(float(rng.uniform(-half + hx, half - hx)), float(rng.uniform(-half + hy, half - hy)),
                        float(hx), float(hy), float(rng.uniform(0, np.pi)), float(rng.uniform(*spec.low_height)))
        if np.any(cand.contains(path, 1.5)):
            continue
        probe = np.vstack([cand.corners(), [[cand.cx, cand.cy]]])
        if np.any(world.inside_building(probe, 1.0)) or np.any(world.under_canopy(probe)):
            continue
        if any(np.any(b.contains(probe, 0.5)) or np.any(cand.contains(b.corners(), 0.5)) for b in low):
            continue
        base = float(world.terrain_z(np.array([cand.cx, cand.cy])))
        low.append(Building(cand.cx, cand.cy, cand.hx, cand.hy, cand.yaw, cand.height, base))
    world.low = low
    return world


def _crown_top_z(world: WorldModel, t: Tree, xy: np.ndarray) -> np.ndarray:
    rr = np.hypot(xy[:, 0] - t.cx, xy[:, 1] - t.cy) / t.radius
    mid = 0.5 * (t.crown_base + t.crown_top)
    return world.terrain_z(xy) + mid + (t.crown_top - mid) * np.sqrt(np.clip(1 - rr ** 2, 0, 1))


def generate_aerial(world: WorldModel, rng) -> PointCloud:
    spec = world.spec
    half = spec.extent / 2
    dens = spec.aerial_density
    parts = []

    xy = _uniform_in_square(rng, _poisson_count(rng, dens * spec.extent ** 2), half)
    xy = xy[~world.inside_building(xy) & ~world.inside_low(xy)]
    canopy = world.under_canopy(xy)
    keep = ~canopy | (rng.uniform(size=len(xy)) < spec.canopy_penetration)
    xy = xy[keep]
    parts.append(np.c_[xy, world.terrain_z(xy)])

    for b in world.buildings + world.low:
        n = _poisson_count(rng, dens * 4 * b.hx * b.hy)
        loc = rng.uniform(-1, 1, (n, 2)) * (b.hx, b.hy)
        c, s = math.cos(b.yaw), math.sin(b.yaw)
        wxy = loc @ np.array([[c, -s], [s, c]]).T + (b.cx, b.cy)
        parts.append(np.c_[wxy, np.full(n, b.base + b.height)])

    for t in world.trees:
        n = _poisson_count(rng, dens * np.pi * t.radius ** 2)
        ang = rng.uniform(0, 2 * np.pi, n)
        rad = t.radius * np.sqrt(rng.uniform(0, 1, n))
        txy = np.c_[t.cx + rad * np.cos(ang), t.cy + rad * np.sin(ang)]
        # first returns come from within the top half-meter of the crown surface
        z = _crown_top_z(world, t, txy) - rng.uniform(0, 0.5, n)
        parts.append(np.c_[txy, z])

    pts = np.vstack(parts)
    pts = pts + rng.normal(0, spec.aerial_noise, pts.shape)
    return PointCloud(pts, "aerial")


def generate_scene(spec: SceneSpec) -> tuple[PointCloud, WorldModel]:
    """Build the world and its top-down aerial cloud (terrain, rooftops, canopy tops; no facades)."""
    world = build_world(spec)
    rng = np.random.default_rng([spec.rng_seed, 0xA1])
    world.aerial = generate_aerial(world, rng)
    return world.aerial, world


def _fov_mask(spec: SceneSpec, origin: np.ndarray, pts: np.ndarray) -> np.ndarray:
    d = pts - origin
    horiz = np.hypot(d[:, 0], d[:, 1])
    rng3 = np.linalg.norm(d, axis=1)
    elev = np.degrees(np.arctan2(d[:, 2], horiz))
    return (rng3 <= spec.sensor_range) & (horiz >= spec.blind_radius) & \
        (elev <= spec.fov_up_deg) & (elev >= spec.fov_down_deg)


def simulate_ground_scan_world(world: WorldModel, origin, sensor_range: float | None = None,
                               rng=None) -> np.ndarray:
    """Points (world frame) seen by a ground sensor at ``origin``: terrain, facades, under-canopy."""
    spec = world.spec if sensor_range is None else world.spec.replace(sensor_range=sensor_range)
    origin = np.asarray(origin, dtype=np.float64)
    if rng is None:
        rng = np.random.default_rng([spec.rng_seed, 0x6D])
    if world.inside_building(origin[None, :2])[0]:
        raise SceneError("sensor origin lies inside a building")
    if origin[2] <= float(world.terrain_z(origin[:2])):
        raise SceneError("sensor origin must be above the terrain")
    R = spec.sensor_range
    o2 = origin[:2]
    parts = []

    # terrain, uniform over the disk of radius R
    n = _poisson_count(rng, spec.ground_terrain_density * np.pi * R * R)
    rad = R * np.sqrt(rng.uniform(0, 1, n))
    ang = rng.uniform(0, 2 * np.pi, n)
    xy = o2 + np.c_[rad * np.cos(ang), rad * np.sin(ang)]
    xy = xy[~world.inside_building(xy) & ~world.inside_low(xy)]
    pts = np.c_[xy, world.terrain_z(xy)]
    pts = pts[_fov_mask(spec, origin, pts) & world.line_of_sight(o2, pts[:, :2])]
    parts.append(pts)

    for k, b in enumerate(world.buildings):
        corners = b.corners()
        if np.min(np.linalg.norm(corners - o2, axis=1)) > R + 2 * max(b.hx, b.hy):
            continue
        for w in range(4):
            p0, p1 = corners[w], corners[(w + 1) % 4]
            edge = p1 - p0
            length = float(np.linalg.norm(edge))
            normal = np.array([edge[1], -edge[0]]) / length  # outward for counter-clockwise corners
            mid = 0.5 * (p0 + p1)
            if np.dot(o2 - mid, normal) <= 0:
                continue
            nw = _poisson_count(rng, spec.ground_facade_density * length * b.height)
            u = rng.uniform(0, 1, nw)
            wxy = p0 + u[:, None] * edge + normal * 0.02
            zt = world.terrain_z(wxy)
            top = b.base + b.height
            z = zt + rng.uniform(0, 1, nw) * np.maximum(top - zt, 0)
            wp = np.c_[wxy, z]
            vis = _fov_mask(spec, origin, wp) & world.line_of_sight(o2, wxy, skip=k) & ~b.blocks(o2, wxy, shrink=0.05)
            parts.append(wp[vis])

    # low objects: facing sides, plus the top when it sits below the sensor
    for b in world.low:
        corners = b.corners()
        if np.min(np.linalg.norm(corners - o2, axis=1)) > R:
            continue
        for w in range(4):
            p0, p1 = corners[w], corners[(w + 1) % 4]
            edge = p1 - p0
            length = float(np.linalg.norm(edge))
            normal = np.array([edge[1], -edge[0]]) / length
            if np.dot(o2 - 0.5 * (p0 + p1), normal) <= 0:
                continue
            nw = _poisson_count(rng, spec.ground_facade_density * length * b.height)
            wxy = p0 + rng.uniform(0, 1, nw)[:, None] * edge + normal * 0.02
            zt = world.terrain_z(wxy)
            wp = np.c_[wxy, zt + rng.uniform(0, 1, nw) * np.maximum(b.base + b.height - zt, 0)]
            parts.append(wp[_fov_mask(spec, origin, wp) & world.line_of_sight(o2, wxy)])
        if b.base + b.height < origin[2]:
            n = _poisson_count(rng, spec.ground_terrain_density * 4 * b.hx * b.hy)
            loc = rng.uniform(-1, 1, (n, 2)) * (b.hx, b.hy)
            c, s_ = math.cos(b.yaw), math.sin(b.yaw)
            wxy = loc @ np.array([[c, -s_], [s_, c]]).T + (b.cx, b.cy)
            tp = np.c_[wxy, np.full(n, b.base + b.height)]
            parts.append(tp[_fov_mask(spec, origin, tp) & world.line_of_sight(o2, wxy)])

    for t in world.trees:
        if math.hypot(t.cx - o2[0], t.cy - o2[1]) > R + t.radius:
            continue
        # trunk
        circ = 2 * np.pi * t.trunk_radius
        tb = world.terrain_z(np.array([t.cx, t.cy]))
        nt = _poisson_count(rng, spec.ground_canopy_density * circ * t.crown_base * 4)
        a = rng.uniform(0, 2 * np.pi, nt)
        txy = np.c_[t.cx + t.trunk_radius * np.cos(a), t.cy + t.trunk_radius * np.sin(a)]
        facing = (txy - (t.cx, t.cy)) @ (o2 - (t.cx, t.cy)) > 0
        tz = tb + rng.uniform(0, t.crown_base, nt)
        tp = np.c_[txy, tz][facing]
        # lower crown volume, seen from below
        nc = _poisson_count(rng, spec.ground_canopy_density * np.pi * t.radius ** 2)
        a = rng.uniform(0, 2 * np.pi, nc)
        rr = t.radius * np.sqrt(rng.uniform(0, 1, nc))
        cxy = np.c_[t.cx + rr * np.cos(a), t.cy + rr * np.sin(a)]
        mid = 0.5 * (t.crown_base + t.crown_top)
        frac = np.sqrt(np.clip(1 - (rr / t.radius) ** 2, 0, 1))
        cz = world.terrain_z(cxy) + mid - (mid - t.crown_base) * frac * rng.uniform(0.6, 1.0, nc)
        cp = np.c_[cxy, cz]
        both = np.vstack([tp, cp])
        parts.append(both[_fov_mask(spec, origin, both) & world.line_of_sight(o2, both[:, :2])])

    pts = np.vstack(parts)
    return pts + rng.normal(0, spec.ground_noise, pts.shape)


def simulate_ground_scan(world: WorldModel, pose: RigidTransform, sensor_range: float | None = None,
                         rng=None) -> PointCloud:
    """Ground scan in the sensor frame of ``pose`` (which maps scan frame -> world)."""
    pts = simulate_ground_scan_world(world, pose.translation, sensor_range, rng)
    return PointCloud(pose.inverse().apply_points(pts), "scan")


def sensor_pose(world: WorldModel, xy, heading: float) -> RigidTransform:
    """Sensor pose on the terrain: heading about z plus roll/pitch following the local slope."""
    xy = np.asarray(xy, dtype=np.float64)
    e = 0.5
    gx = float((world.terrain_z(xy + (e, 0)) - world.terrain_z(xy - (e, 0))) / (2 * e))
    gy = float((world.terrain_z(xy + (0, e)) - world.terrain_z(xy - (0, e))) / (2 * e))
    c, s = math.cos(heading), math.sin(heading)
    # slope along and across the heading
    along = gx * c + gy * s
    across = -gx * s + gy * c
    pitch = -math.atan(along)
    roll = math.atan(across)
    z = float(world.terrain_z(xy)) + world.spec.sensor_height
    return RigidTransform.from_euler(roll, pitch, heading, (xy[0], xy[1], z))


def path_poses(world: WorldModel, n: int, offset: float = 0.0) -> list:
    """``n`` sensor poses equally spaced (by arc length) along the world's path."""
    path = world.path
    seg = np.linalg.norm(np.roll(path, -1, axis=0) - path, axis=1)
    s = np.r_[0.0, np.cumsum(seg)]
    total = s[-1]
    out = []
    for k in range(n):
        target = (offset + k * total / n) % total
        i = int(np.searchsorted(s, target, side="right") - 1)
        f = (target - s[i]) / seg[i]
        p = path[i] + f * (path[(i + 1) % len(path)] - path[i])
        d = path[(i + 1) % len(path)] - path[i]
        out.append(sensor_pose(world, p, math.atan2(d[1], d[0])))
    return out


def crop_xy(cloud: PointCloud, center_xy, radius: float) -> PointCloud:
    d = np.hypot(cloud.points[:, 0] - center_xy[0], cloud.points[:, 1] - center_xy[1])
    return cloud.subset(d <= radius)


# Benchmark scenes: lighter ground scans, denser aerial, hilly terrain and many low objects
# (cars, hedges, walls) so the inlier RMSE separates correct from wrong alignments.
_BENCH = dict(aerial_density=4.0, ground_terrain_density=0.3, ground_facade_density=1.5,
              ground_canopy_density=1.0, sensor_range=45.0, n_bumps=60, bump_amp=3.0, bump_sigma=6.0,
              n_low=250, low_height=(1.0, 2.5))

PRESETS = {
    # mixed campus: moderate facades and canopy
    "campus": dict(),
    # open, terrain-dominated sites with few low buildings (high coverage)
    "open": dict(n_buildings=4, building_height=(4.0, 8.0), n_trees=5, ground_facade_density=3.0,
                 n_bumps=16, bump_amp=2.0),
    # facade- and canopy-heavy sites (low ground->aerial coverage)
    "facade": dict(n_buildings=10, building_size=(5.0, 10.0), building_height=(12.0, 25.0), n_trees=16,
                   ground_facade_density=10.0, ground_canopy_density=8.0, path_clearance=4.0),
    "bench-open": {**_BENCH, "n_buildings": 4, "building_height": (4.0, 8.0), "n_trees": 5},
    "bench-campus": dict(_BENCH),
    "bench-facade": {**_BENCH, "n_buildings": 10, "building_size": (5.0, 10.0), "building_height": (12.0, 25.0),
                     "n_trees": 16, "ground_facade_density": 2.0, "ground_canopy_density": 1.5,
                     "path_clearance": 4.0},
}


def preset(name: str, seed: int = 0, **overrides) -> SceneSpec:
    if name not in PRESETS:
        raise SceneError(f"unknown scene preset {name!r}; choose from {sorted(PRESETS)}")
    return SceneSpec(name=name, rng_seed=seed).replace(**{**PRESETS[name], **overrides})


def parse_scene_config(text: str) -> SceneSpec:
    """Parse ``key = value`` lines (``#`` comments). Tuples are comma-separated numbers.

    A ``preset`` key seeds the remaining defaults from a named preset.
    """
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SceneError(f"line {lineno}: expected 'key = value'")
        k, v = (x.strip() for x in line.split("=", 1))
        kv[k] = v
    base = preset(kv.pop("preset"), 0) if "preset" in kv else SceneSpec()
    types = {f.name: f.type for f in fields(SceneSpec)}
    current = {f.name: getattr(base, f.name) for f in fields(SceneSpec)}
    out = {}
    for k, v in kv.items():
        if k not in types:
            raise SceneError(f"unknown scene key {k!r}")
        ref = current[k]
        try:
            if isinstance(ref, tuple):
                out[k] = tuple(float(x) for x in v.split(","))
            elif isinstance(ref, bool):
                out[k] = v.lower() in ("1", "true", "yes")
            elif isinstance(ref, int):
                out[k] = int(v)
            elif isinstance(ref, float):
                out[k] = float(v)
            else:
                out[k] = v
        except ValueError as exc:
            raise SceneError(f"bad value for {k!r}: {v!r}") from exc
    return base.replace(**out)


def format_scene_config(spec: SceneSpec) -> str:
    lines = []
    for f in fields(SceneSpec):
        v = getattr(spec, f.name)
        lines.append(f"{f.name} = {','.join(repr(float(x)) for x in v) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"


def scene_summary(world: WorldModel) -> dict:
    return {
        "buildings": len(world.buildings),
        "trees": len(world.trees),
        "low_objects": len(world.low),
        "aerial_points": 0 if world.aerial is None else len(world.aerial),
    }


def building_corner_markers(world: WorldModel, center_xy: Sequence[float], radius: float) -> np.ndarray:
    """Base corners (terrain level) of buildings within ``radius`` of ``center_xy``."""
    out = []
    for b in world.buildings:
        for c in b.corners():
            if math.hypot(c[0] - center_xy[0], c[1] - center_xy[1]) <= radius:
                out.append([c[0], c[1], b.base])
    return np.array(out, dtype=np.float64).reshape(-1, 3)
