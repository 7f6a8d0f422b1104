"""FPFH descriptors and feature-matching RANSAC for global (initialization-free) alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import EstimationError, PointCloud, RigidTransform, estimate_rigid

FPFH_DIM = 33
_BINS = 11
_HORIZONTAL_NZ = 1e-6


@dataclass(frozen=True)
class FpfhConfig:
    voxel: float = 0.5
    feature_radius: float = 1.0
    max_corr: float = 2.0
    ransac_iterations: int = 4_000_000
    rng_seed: int = 42
    # desk-scale budget: hypotheses that pass the pre-checks and get a full inlier count
    max_evaluations: int = 20_000
    confidence: float = 0.999
    edge_similarity: float = 0.9
    min_neighbors: int = 5
    min_inliers: int = 8
    batch: int = 20_000

    def __post_init__(self):
        for name in ("voxel", "feature_radius", "max_corr", "ransac_iterations", "max_evaluations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")

    def with_seed(self, seed: int) -> FpfhConfig:
        return FpfhConfig(**{**self.__dict__, "rng_seed": int(seed)})


@dataclass(frozen=True, eq=False)
class FeatureCloud:
    keypoints: PointCloud
    descriptors: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if len(self.keypoints) != len(self.descriptors):
            raise ValueError("one descriptor per keypoint required")

    def __len__(self) -> int:
        return len(self.keypoints)


@dataclass(frozen=True)
class RansacResult:
    transform: RigidTransform
    inliers: int
    correspondences: int
    evaluations: int
    failed: bool


def voxel_downsample(c: PointCloud, voxel: float) -> PointCloud:
    """One centroid per occupied voxel, ordered by voxel key."""
    if voxel <= 0:
        raise ValueError("voxel size must be positive")
    keys = np.floor(c.points / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    sums = np.zeros((len(counts), 3))
    np.add.at(sums, inv, c.points)
    return PointCloud(sums / counts[:, None], c.frame)


def _neighbor_pairs(tree: cKDTree, pts: np.ndarray, radius: float):
    lists = tree.query_ball_point(pts, r=radius)
    lens = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    ii = np.repeat(np.arange(len(pts)), lens)
    jj = np.fromiter((j for x in lists for j in sorted(x)), dtype=np.int64, count=int(lens.sum()))
    return ii, jj, lens


def estimate_normals(pts: np.ndarray, radius: float, min_neighbors: int = 5):
    """PCA normals over radius neighbourhoods, oriented toward +z.

    Returns (normals, valid) where valid marks points with at least ``min_neighbors`` neighbours
    (self included).
    """
    tree = cKDTree(pts)
    ii, jj, lens = _neighbor_pairs(tree, pts, radius)
    n = len(pts)
    cnt = lens.astype(np.float64)
    mean = np.zeros((n, 3))
    np.add.at(mean, ii, pts[jj])
    mean /= np.maximum(cnt, 1)[:, None]
    diff = pts[jj] - mean[ii]
    cov = np.zeros((n, 3, 3))
    np.add.at(cov, ii, diff[:, :, None] * diff[:, None, :])
    valid = lens >= min_neighbors
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    flip = normals[:, 2] < 0
    # near-horizontal normals (walls) have no z preference; point them away from the cloud centroid,
    # which moves with the cloud, so the choice survives rigid motion
    horiz = np.abs(normals[:, 2]) < _HORIZONTAL_NZ
    outward = np.sum(normals * (pts - pts.mean(axis=0)), axis=1) < 0
    flip = np.where(horiz, outward, flip)
    normals[flip] *= -1
    normals[~valid] = 0.0
    return normals, valid


def _pair_features(p1, n1, p2, n2):
    """Vectorized (f1 angle, f2, f3, distance) Darboux-frame features for point pairs."""
    dp = p2 - p1
    f4 = np.linalg.norm(dp, axis=1)
    ok = f4 > 0
    f4s = np.where(ok, f4, 1.0)
    a1 = np.sum(n1 * dp, axis=1) / f4s
    a2 = np.sum(n2 * dp, axis=1) / f4s
    swap = np.arccos(np.clip(np.abs(a1), 0, 1)) > np.arccos(np.clip(np.abs(a2), 0, 1))
    u = np.where(swap[:, None], n2, n1)
    nt = np.where(swap[:, None], n1, n2)
    dpv = np.where(swap[:, None], -dp, dp)
    f3 = np.where(swap, -a2, a1)
    v = np.cross(dpv, u)
    vn = np.linalg.norm(v, axis=1)
    ok &= vn > 0
    v = v / np.where(vn > 0, vn, 1.0)[:, None]
    w = np.cross(u, v)
    f2 = np.sum(v * nt, axis=1)
    f1 = np.arctan2(np.sum(w * nt, axis=1), np.sum(u * nt, axis=1))
    return f1, f2, f3, ok


def _bin(x, lo, hi):
    return np.clip(np.floor(_BINS * (x - lo) / (hi - lo)).astype(np.int64), 0, _BINS - 1)


def compute_fpfh(pts: np.ndarray, radius: float, min_neighbors: int = 5):
    """33-bin FPFH for every point; invalid points get an all-zero descriptor."""
    pts = np.asarray(pts, dtype=np.float64)
    n = len(pts)
    normals, valid = estimate_normals(pts, radius, min_neighbors)
    tree = cKDTree(pts)
    ii, jj, _ = _neighbor_pairs(tree, pts, radius)
    keep = (ii != jj) & valid[ii] & valid[jj]
    ii, jj = ii[keep], jj[keep]

    f1, f2, f3, ok = _pair_features(pts[ii], normals[ii], pts[jj], normals[jj])
    ii, jj, f1, f2, f3 = ii[ok], jj[ok], f1[ok], f2[ok], f3[ok]
    k = np.bincount(ii, minlength=n).astype(np.float64)
    incr = 100.0 / np.maximum(k, 1)[ii]
    spfh = np.zeros((n, FPFH_DIM))
    np.add.at(spfh, (ii, _bin(f1, -np.pi, np.pi)), incr)
    np.add.at(spfh, (ii, _BINS + _bin(f2, -1.0, 1.0)), incr)
    np.add.at(spfh, (ii, 2 * _BINS + _bin(f3, -1.0, 1.0)), incr)

    # distance-weighted neighbour SPFH sum, each 11-bin block renormalized to 100
    dist = np.linalg.norm(pts[jj] - pts[ii], axis=1)
    wsum = np.zeros((n, FPFH_DIM))
    np.add.at(wsum, ii, spfh[jj] / dist[:, None])
    block = wsum.reshape(n, 3, _BINS).sum(axis=2)
    scale = np.where(block > 0, 100.0 / np.where(block > 0, block, 1.0), 0.0)
    fpfh = (wsum.reshape(n, 3, _BINS) * scale[:, :, None]).reshape(n, FPFH_DIM) + spfh
    usable = valid & (k > 0)
    fpfh[~usable] = 0.0
    return fpfh, usable


def fpfh(c: PointCloud, cfg: FpfhConfig = FpfhConfig()) -> FeatureCloud:
    """Voxel-downsample then describe each keypoint with a 33-bin FPFH."""
    kp = voxel_downsample(c, cfg.voxel)
    desc, usable = compute_fpfh(kp.points, cfg.feature_radius, cfg.min_neighbors)
    return FeatureCloud(kp, desc, usable)


def match_features(srcF: FeatureCloud, dstF: FeatureCloud) -> tuple[np.ndarray, np.ndarray]:
    """Mutual nearest neighbours in descriptor space among usable keypoints."""
    si = np.flatnonzero(srcF.valid)
    di = np.flatnonzero(dstF.valid)
    if len(si) == 0 or len(di) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    _, fwd = cKDTree(dstF.descriptors[di]).query(srcF.descriptors[si])
    _, bwd = cKDTree(srcF.descriptors[si]).query(dstF.descriptors[di])
    mutual = bwd[fwd] == np.arange(len(si))
    return si[mutual], di[fwd[mutual]]


def _batched_kabsch(P: np.ndarray, Q: np.ndarray):
    """Rigid fits for stacks of (B, k, 3) correspondences."""
    mp = P.mean(axis=1, keepdims=True)
    mq = Q.mean(axis=1, keepdims=True)
    H = np.einsum("bki,bkj->bij", P - mp, Q - mq)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(np.einsum("bji,bkj->bik", Vt, U)))
    d[d == 0] = 1.0
    D = np.tile(np.eye(3), (len(P), 1, 1))
    D[:, 2, 2] = d
    R = np.einsum("bji,bjk,blk->bil", Vt, D, U)
    t = mq[:, 0] - np.einsum("bij,bj->bi", R, mp[:, 0])
    return R, t


def ransac_register(srcF: FeatureCloud, dstF: FeatureCloud, cfg: FpfhConfig = FpfhConfig()) -> RansacResult:
    """Feature-correspondence RANSAC (3-point samples, edge-length pre-check).

    Deterministic for a fixed ``cfg.rng_seed``. Ties in inlier count keep the earliest hypothesis.
    """
    ident = RigidTransform.identity()
    if len(srcF) < 3 or len(dstF) < 3:
        return RansacResult(ident, 0, 0, 0, True)
    si, di = match_features(srcF, dstF)
    m = len(si)
    if m < 3:
        return RansacResult(ident, 0, m, 0, True)
    P = srcF.keypoints.points[si]
    Q = dstF.keypoints.points[di]
    rng = np.random.default_rng(cfg.rng_seed)
    gate2 = cfg.max_corr ** 2

    best_count, best_R, best_t = -1, None, None
    drawn = evaluated = 0
    needed = cfg.ransac_iterations
    while drawn < min(needed, cfg.ransac_iterations) and evaluated < cfg.max_evaluations:
        b = min(cfg.batch, cfg.ransac_iterations - drawn)
        samp = rng.integers(0, m, size=(b, 3))
        drawn += b
        distinct = (samp[:, 0] != samp[:, 1]) & (samp[:, 0] != samp[:, 2]) & (samp[:, 1] != samp[:, 2])
        ps, qs = P[samp], Q[samp]
        ok = distinct
        for a, c in ((0, 1), (0, 2), (1, 2)):
            ls = np.linalg.norm(ps[:, a] - ps[:, c], axis=1)
            lq = np.linalg.norm(qs[:, a] - qs[:, c], axis=1)
            ok &= (ls > cfg.edge_similarity * lq) & (lq > cfg.edge_similarity * ls)
        area = np.linalg.norm(np.cross(ps[:, 1] - ps[:, 0], ps[:, 2] - ps[:, 0]), axis=1)
        ok &= area > 1e-6
        idx = np.flatnonzero(ok)[: cfg.max_evaluations - evaluated]
        for start in range(0, len(idx), 256):
            chunk = idx[start:start + 256]
            R, t = _batched_kabsch(ps[chunk], qs[chunk])
            # the sample itself must align within the gate
            res = np.einsum("bij,bkj->bki", R, ps[chunk]) + t[:, None] - qs[chunk]
            good = np.all(np.sum(res ** 2, axis=2) <= gate2, axis=1)
            evaluated += len(chunk)
            if not np.any(good):
                continue
            R, t = R[good], t[good]
            moved = np.einsum("bij,kj->bki", R, P) + t[:, None]
            counts = np.count_nonzero(np.sum((moved - Q) ** 2, axis=2) <= gate2, axis=1)
            k = int(np.argmax(counts))
            if counts[k] > best_count:
                best_count, best_R, best_t = int(counts[k]), R[k], t[k]
        if best_count > 0:
            w = best_count / m
            if w >= 1.0:
                break
            needed = math.ceil(math.log(1 - cfg.confidence) / math.log(1 - w ** 3)) if w ** 3 > 1e-300 else needed

    if best_count < cfg.min_inliers:
        return RansacResult(ident, max(best_count, 0), m, evaluated, True)
    T = RigidTransform(best_R, best_t)
    inl = np.sum((T.apply_points(P) - Q) ** 2, axis=1) <= gate2
    try:
        T = estimate_rigid(P[inl], Q[inl])
    except EstimationError:
        pass
    return RansacResult(T, best_count, m, evaluated, False)
