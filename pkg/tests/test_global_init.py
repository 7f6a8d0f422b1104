import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgsr.core import PointCloud, RigidTransform, rotation_angle
from rgsr.global_init import (FPFH_DIM, FpfhConfig, compute_fpfh, fpfh, ransac_register, voxel_downsample)
from rgsr.icp import ctf


def test_voxel_examples():
    pts = np.array([[0.1, 0.1, 0.1], [0.3, 0.2, 0.4], [1.2, 0.1, 0.1]])
    out = voxel_downsample(PointCloud(pts), 0.5)
    assert len(out) == 2
    assert np.allclose(out.points[0], [0.2, 0.15, 0.25])
    with pytest.raises(ValueError):
        voxel_downsample(PointCloud(pts), 0.0)


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 3.0))
@settings(max_examples=40, deadline=None)
def test_voxel_one_point_per_occupied_cell(seed, v):
    pts = np.random.default_rng(seed).uniform(-10, 10, (300, 3))
    out = voxel_downsample(PointCloud(pts), v)
    assert len(out) == len({tuple(k) for k in np.floor(pts / v).astype(int)})
    assert len(out) <= len(pts)
    assert len({tuple(k) for k in np.floor(out.points / v).astype(int)}) == len(out)


def _structure(seed=0):
    """Ground with boxes and a wall: enough geometric variety for distinctive descriptors."""
    rng = np.random.default_rng(seed)
    g = np.c_[rng.uniform(-15, 15, (3000, 2)), np.zeros(3000)]
    g[:, 2] = 0.4 * np.sin(g[:, 0] / 3) * np.cos(g[:, 1] / 4)
    parts = [g]
    for cx, cy, h in ((4, 5, 2.0), (-6, -3, 3.0), (-2, 8, 1.5), (7, -7, 2.5)):
        n = 500
        u = rng.uniform(-1.5, 1.5, n)
        z = rng.uniform(0, h, n)
        side = rng.integers(0, 4, n)
        x = np.where(side == 0, -1.5, np.where(side == 1, 1.5, u))
        y = np.where(side == 2, -1.5, np.where(side == 3, 1.5, u))
        parts.append(np.c_[cx + x, cy + y, z])
        parts.append(np.c_[cx + rng.uniform(-1.5, 1.5, 200), cy + rng.uniform(-1.5, 1.5, 200), np.full(200, h)])
    return np.vstack(parts)


def test_fpfh_shape_and_determinism():
    c = PointCloud(_structure())
    a, b = fpfh(c), fpfh(c)
    assert a.descriptors.shape == (len(a.keypoints), FPFH_DIM)
    assert np.array_equal(a.descriptors, b.descriptors)
    assert a.valid.any()


def test_plane_interior_descriptors_are_similar():
    g = np.mgrid[-5:5.01:0.25, -5:5.01:0.25].reshape(2, -1).T
    pts = np.c_[g, np.zeros(len(g))]
    d, ok = compute_fpfh(pts, 1.0)
    inner = ok & (np.abs(pts[:, 0]) < 3) & (np.abs(pts[:, 1]) < 3)
    D = d[inner]
    assert np.max(np.linalg.norm(D - D[0], axis=1)) < 1e-6 * max(1.0, np.linalg.norm(D[0]))


@given(st.floats(-np.pi, np.pi), st.floats(-50, 50), st.floats(-50, 50), st.floats(-5, 5))
@settings(max_examples=10, deadline=None)
def test_fpfh_invariant_to_yaw_and_translation(yaw, tx, ty, tz):
    pts = _structure(1)[::3]
    T = RigidTransform.from_yaw(yaw, (tx, ty, tz))
    d0, ok0 = compute_fpfh(pts, 1.0)
    d1, ok1 = compute_fpfh(T.apply_points(pts), 1.0)
    assert np.array_equal(ok0, ok1)
    err = np.linalg.norm(d0 - d1, axis=1) / np.maximum(1, np.linalg.norm(d0, axis=1))
    assert np.all(err <= 1e-6)


def test_ransac_recovers_known_transform():
    pts = _structure(2)
    T_true = RigidTransform.from_yaw(0.7, (3.0, -2.0, 0.2))
    src, dst = PointCloud(pts), PointCloud(T_true.apply_points(pts))
    cfg = FpfhConfig()
    rr = ransac_register(fpfh(src, cfg), fpfh(dst, cfg), cfg)
    assert not rr.failed
    d = T_true.inverse() @ rr.transform
    # voxel keypoints of the moved cloud are not the moved keypoints, so the estimate is coarse
    assert rotation_angle(d.rotation) < np.radians(5) and np.linalg.norm(d.translation) < 1.0
    refined = ctf(src, dst.index, rr.transform).transform
    d = T_true.inverse() @ refined
    assert rotation_angle(d.rotation) < np.radians(0.1) and np.linalg.norm(d.translation) < 0.05


def test_ransac_is_seed_deterministic():
    pts = _structure(3)
    T_true = RigidTransform.from_yaw(-0.4, (1.0, 1.0, 0.0))
    cfg = FpfhConfig(rng_seed=7)
    fs, fd = fpfh(PointCloud(pts), cfg), fpfh(PointCloud(T_true.apply_points(pts)), cfg)
    a, b = ransac_register(fs, fd, cfg), ransac_register(fs, fd, cfg)
    assert a.transform.as_matrix().tobytes() == b.transform.as_matrix().tobytes()
    assert (a.inliers, a.evaluations) == (b.inliers, b.evaluations)


def test_unrelated_clouds_fail_or_score_poorly():
    rng = np.random.default_rng(5)
    a = PointCloud(rng.uniform(-10, 10, (2000, 3)))
    b = PointCloud(rng.uniform(-10, 10, (2000, 3)) * (1, 1, 0.1))
    cfg = FpfhConfig(max_evaluations=2000)
    rr = ransac_register(fpfh(a, cfg), fpfh(b, cfg), cfg)
    assert rr.failed or rr.inliers < 0.2 * rr.correspondences


def test_too_few_keypoints_fails():
    c = PointCloud(np.array([[0.0, 0, 0], [5.0, 0, 0]]))
    rr = ransac_register(fpfh(c), fpfh(c))
    assert rr.failed and rr.transform.is_valid()


def test_config_validation():
    with pytest.raises(ValueError):
        FpfhConfig(min_inliers=2)
    with pytest.raises(ValueError):
        FpfhConfig(voxel=0)
    assert FpfhConfig().with_seed(9).rng_seed == 9
