"""Bird's-eye-view occupancy grids and Fourier-Mellin SE(2) proposals.

Grid convention: cell ``[i, j]`` covers world ``x = origin_x + (j + 0.5) * res`` and
``y = origin_y + (i + 0.5) * res``; rows follow +y and columns +x, so image rotations keep the
world handedness. A proposal (yaw, tx, ty) is the planar motion p -> Rz(yaw) p + (tx, ty, 0)
that moves the source cloud onto the destination cloud.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import PointCloud, RigidTransform, rot_z

GRID_SIZE = 200
RESOLUTION = 0.5
N_BANDS = 3
BAND_QUANTILES = (33.0, 67.0)
ANGLE_BINS = 360  # over 180 degrees
ANGLE_STEP = np.pi / ANGLE_BINS
YAW_WINDOW = np.radians(30.0)
K_THETA = 3
K_T = 5
NMS_RADIUS = 2
DUMP_MAGIC = b"BEVF32\x00\x01"


@dataclass(frozen=True, eq=False)
class BevGrid:
    cells: np.ndarray
    origin: tuple
    band_edges: tuple
    resolution: float = RESOLUTION

    def __post_init__(self):
        if self.cells.shape != (GRID_SIZE, GRID_SIZE, N_BANDS):
            raise ValueError(f"BEV grid must be {GRID_SIZE}x{GRID_SIZE}x{N_BANDS}, got {self.cells.shape}")
        if self.resolution != RESOLUTION:
            raise ValueError("BEV resolution is fixed at 0.5 m")
        if not self.band_edges[0] <= self.band_edges[1]:
            raise ValueError("band edges must be ascending")

    @property
    def center(self) -> np.ndarray:
        half = GRID_SIZE * self.resolution / 2
        return np.array([self.origin[0] + half, self.origin[1] + half])

    def is_empty(self) -> bool:
        return not np.any(self.cells)


@dataclass(frozen=True)
class Se2Hypothesis:
    yaw: float
    tx: float
    ty: float
    correlation_score: float = 0.0

    def __post_init__(self):
        if abs(self.yaw) > YAW_WINDOW + 1e-12:
            raise ValueError("yaw outside the +/-30 degree search window")


def rasterize_bev(c: PointCloud | np.ndarray, center) -> BevGrid:
    """Binary occupancy in three height bands split at the cloud's own 33rd/67th z-percentiles."""
    pts = c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("cannot rasterize an empty cloud")
    half = GRID_SIZE * RESOLUTION / 2
    origin = (float(center[0]) - half, float(center[1]) - half)
    lo, hi = np.percentile(pts[:, 2], BAND_QUANTILES)
    band = np.where(pts[:, 2] <= lo, 0, np.where(pts[:, 2] <= hi, 1, 2))
    j = np.floor((pts[:, 0] - origin[0]) / RESOLUTION).astype(np.int64)
    i = np.floor((pts[:, 1] - origin[1]) / RESOLUTION).astype(np.int64)
    inside = (i >= 0) & (i < GRID_SIZE) & (j >= 0) & (j < GRID_SIZE)
    cells = np.zeros((GRID_SIZE, GRID_SIZE, N_BANDS), dtype=np.float32)
    cells[i[inside], j[inside], band[inside]] = 1.0
    return BevGrid(cells, origin, (float(lo), float(hi)))


def _window() -> np.ndarray:
    w = np.hanning(GRID_SIZE)
    return np.outer(w, w)


def _prepared(ch: np.ndarray) -> np.ndarray:
    x = ch.astype(np.float64)
    return (x - x.mean()) * _window()


def _polar_magnitude(ch: np.ndarray) -> np.ndarray:
    """Log-magnitude spectrum resampled on (angle over [0, pi), log-radius) coordinates."""
    mag = np.abs(np.fft.fftshift(np.fft.fft2(_prepared(ch))))
    c = GRID_SIZE / 2
    # high-pass emphasis: the DC neighbourhood carries no orientation
    fy, fx = np.meshgrid(np.arange(GRID_SIZE) - c, np.arange(GRID_SIZE) - c, indexing="ij")
    mag = np.log1p(mag) * (1.0 - np.exp(-(fx ** 2 + fy ** 2) / (2 * 4.0 ** 2)))
    theta = np.arange(ANGLE_BINS) * ANGLE_STEP
    radii = np.geomspace(3.0, c - 1, 96)
    rr, tt = np.meshgrid(radii, theta)
    rows = c + rr * np.sin(tt)
    cols = c + rr * np.cos(tt)
    return ndimage.map_coordinates(mag, [rows, cols], order=1, mode="constant")


def _phase_corr_angle(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Phase correlation along the angular axis, summed over radii; index k means b = a shifted by +k bins."""
    Fa = np.fft.fft(pa, axis=0)
    Fb = np.fft.fft(pb, axis=0)
    cross = Fb * np.conj(Fa)
    cross /= np.maximum(np.abs(cross), 1e-12)
    return np.real(np.fft.ifft(cross, axis=0)).sum(axis=1)


def rotation_surface(g_src: BevGrid, g_dst: BevGrid) -> np.ndarray:
    surf = np.zeros(ANGLE_BINS)
    for k in range(N_BANDS):
        a, b = g_src.cells[:, :, k], g_dst.cells[:, :, k]
        if not (a.any() and b.any()):
            continue
        surf += _phase_corr_angle(_polar_magnitude(a), _polar_magnitude(b))
    return surf


def _signed_bins(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.where(k > n // 2, k - n, k)


def fm_rotation_candidates(g_src: BevGrid, g_dst: BevGrid, k: int = K_THETA) -> list:
    """Up to k yaw angles (radians, within +/-30 deg) ordered by summed-channel correlation.

    A returned yaw is the rotation that turns the source grid content into the destination's.
    """
    if g_src.is_empty() or g_dst.is_empty():
        return []
    surf = rotation_surface(g_src, g_dst)
    if not np.any(surf):
        return []
    shifts = _signed_bins(ANGLE_BINS)
    yaws = shifts * ANGLE_STEP
    inwin = np.abs(yaws) <= YAW_WINDOW + 1e-12
    # local maxima on the circular surface, restricted to the window
    peak = (surf >= np.roll(surf, 1)) & (surf >= np.roll(surf, -1)) & inwin
    cand = np.flatnonzero(peak)
    order = cand[np.lexsort((np.abs(shifts[cand]), -surf[cand]))]
    return [float(yaws[i]) for i in order[:k]]


def translation_surface(g_src: BevGrid, g_dst: BevGrid) -> np.ndarray:
    surf = np.zeros((GRID_SIZE, GRID_SIZE))
    for k in range(N_BANDS):
        a, b = g_src.cells[:, :, k], g_dst.cells[:, :, k]
        if not (a.any() and b.any()):
            continue
        A = np.fft.fft2(_prepared(a))
        B = np.fft.fft2(_prepared(b))
        cross = B * np.conj(A)
        cross /= np.maximum(np.abs(cross), 1e-12)
        surf += np.real(np.fft.ifft2(cross))
    return surf


def fm_translation_candidates(g_src_rotated: BevGrid, g_dst: BevGrid, k: int = K_T) -> list:
    """Top-k planar shifts (dx, dy, score) in meters that move source content onto destination."""
    if g_src_rotated.is_empty() or g_dst.is_empty():
        return []
    surf = translation_surface(g_src_rotated, g_dst)
    if not np.any(surf):
        return []
    work = surf.copy()
    sy = _signed_bins(GRID_SIZE)
    out = []
    while len(out) < k:
        flat = int(np.argmax(work))
        if not np.isfinite(work.flat[flat]):
            break
        i, j = divmod(flat, GRID_SIZE)
        out.append((float(sy[j] * RESOLUTION), float(sy[i] * RESOLUTION), float(surf[i, j])))
        # circular non-maximum suppression
        ii = (np.arange(i - NMS_RADIUS, i + NMS_RADIUS + 1)) % GRID_SIZE
        jj = (np.arange(j - NMS_RADIUS, j + NMS_RADIUS + 1)) % GRID_SIZE
        work[np.ix_(ii, jj)] = -np.inf
    return out


def lift_to_se3(h: Se2Hypothesis, base: RigidTransform) -> RigidTransform:
    """Apply the planar motion after ``base``; z, roll and pitch of base are untouched."""
    return RigidTransform(rot_z(h.yaw), (h.tx, h.ty, 0.0)) @ base


def extract_se2(lifted: RigidTransform, base: RigidTransform) -> Se2Hypothesis:
    d = lifted @ base.inverse()
    return Se2Hypothesis(d.yaw, float(d.translation[0]), float(d.translation[1]))


def fm_hypotheses(src: PointCloud, dst: PointCloud, center, k_theta: int = K_THETA, k_t: int = K_T) -> list:
    """Planar proposals moving ``src`` onto ``dst``, best correlation first (at most k_theta * k_t)."""
    center = np.asarray(center, dtype=np.float64)[:2]
    g_src = rasterize_bev(src, center)
    g_dst = rasterize_bev(dst, center)
    hyps = []
    c3 = np.array([center[0], center[1], 0.0])
    for yaw in fm_rotation_candidates(g_src, g_dst, k_theta):
        # rotate about the grid center: p -> R (p - c) + c
        R = rot_z(yaw)
        rotated = (src.points - c3) @ R.T + c3
        g_rot = rasterize_bev(rotated, center)
        off = c3 - R @ c3
        for dx, dy, score in fm_translation_candidates(g_rot, g_dst, k_t):
            hyps.append(Se2Hypothesis(yaw, float(off[0] + dx), float(off[1] + dy), score))
    hyps.sort(key=lambda h: -h.correlation_score)
    return hyps[: k_theta * k_t]


def dump_array(path, arr: np.ndarray) -> None:
    """Write a float32 array: magic, ndim (u32), dims (u32 each), row-major float32 payload."""
    a = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(DUMP_MAGIC)
        f.write(struct.pack("<I", a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def load_array(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != DUMP_MAGIC:
        raise ValueError(f"{path}: not a BEV float32 dump")
    (ndim,) = struct.unpack_from("<I", data, 8)
    shape = struct.unpack_from(f"<{ndim}I", data, 12)
    off = 12 + 4 * ndim
    return np.frombuffer(data, dtype="<f4", offset=off).reshape(shape).copy()
