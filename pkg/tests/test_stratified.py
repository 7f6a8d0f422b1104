import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgsr.core import PointCloud, RigidTransform
from rgsr.metrics import inlier_rmse
from rgsr.icp import StageSchedule, ctf, run_schedule
from rgsr.stratified import (NATIVE_Z, PercentileSpec, TwoStageConfig, height_subset, height_subset_mask,
                             nearest_rank_quantile, two_stage, two_stage_reverse)


def column(z):
    z = np.asarray(z, dtype=float)
    return PointCloud(np.c_[np.zeros(len(z)), np.zeros(len(z)), z])


def test_nearest_rank_example():
    c = column(np.arange(10.0))
    sub = height_subset(c, c.points[:, 2], 30)
    assert sorted(sub.points[:, 2]) == [0.0, 1.0, 2.0]


def test_full_percentile_keeps_everything():
    z = np.random.default_rng(0).normal(size=57)
    assert height_subset_mask(z, 100).all()


def test_ties_are_included():
    assert height_subset_mask([1.0, 1.0, 1.0, 5.0], 25).sum() == 3


@pytest.mark.parametrize("p", [0, -5, 101])
def test_bad_percentile_rejected(p):
    with pytest.raises(ValueError):
        height_subset_mask([1.0, 2.0], p)
    with pytest.raises(ValueError):
        PercentileSpec(p)


def test_nearest_rank_against_sorted_index():
    v = np.random.default_rng(1).uniform(size=101)
    assert nearest_rank_quantile(v, 50) == np.sort(v)[50]  # ceil(50.5) = 51st smallest


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=200), st.floats(1, 100), st.floats(1, 100))
@settings(max_examples=60)
def test_subsets_are_nested_and_sized(z, p1, p2):
    lo, hi = sorted((p1, p2))
    a, b = height_subset_mask(z, lo), height_subset_mask(z, hi)
    assert np.all(b[a])
    assert a.sum() >= np.ceil(lo / 100 * len(z)) - 1e-9


def _scene(seed=0):
    rng = np.random.default_rng(seed)
    ground = np.c_[rng.uniform(-20, 20, (600, 2)), rng.normal(0, 0.02, 600)]
    ground[:, 2] += 0.3 * np.sin(ground[:, 0] / 4) + 0.2 * np.cos(ground[:, 1] / 5)
    walls = np.c_[np.full(200, 8.0), rng.uniform(-10, 10, 200), rng.uniform(0, 6, 200)]
    walls2 = np.c_[rng.uniform(-15, -5, 200), np.full(200, -9.0), rng.uniform(0, 6, 200)]
    return np.vstack([ground, walls, walls2])


def test_two_stage_full_percentile_equals_ctf_with_repeated_stage():
    A = PointCloud(_scene())
    T_true = RigidTransform.from_yaw(0.03, (0.8, -0.5, 0.1))
    S = PointCloud(T_true.inverse().apply_points(A.points))
    out = two_stage(S, A, RigidTransform.identity(), TwoStageConfig(percentile=PercentileSpec(100)))
    ref = ctf(S, A.index, RigidTransform.identity(), StageSchedule((5.0, 3.0, 2.0, 2.0, 1.5, 1.0), 50))
    assert np.allclose(out.transform.as_matrix(), ref.transform.as_matrix(), atol=1e-12)
    assert out.score.rmse == pytest.approx(ref.score.rmse, abs=1e-12)


def test_two_stage_identical_clouds_is_identity():
    pts = _scene(1)
    out = two_stage(PointCloud(pts), PointCloud(pts), RigidTransform.identity())
    assert np.allclose(out.transform.as_matrix(), np.eye(4), atol=1e-9)
    assert out.score.rmse <= 1e-9


def test_native_z_frame_uses_raw_heights():
    A = PointCloud(_scene(2))
    S = PointCloud(RigidTransform.from_translation((0.3, 0.2, 0.0)).apply_points(A.points))
    T0 = RigidTransform.from_euler(0.3, 0.0, 0.0)  # tilted seed: seed-frame heights would pick other points
    cfg = TwoStageConfig(percentile=PercentileSpec(30, NATIVE_Z))
    out = two_stage(S, A, T0, cfg)
    sub = height_subset(S, S.points[:, 2], 30)
    T, _, _ = run_schedule(sub, A.index, T0, (5.0, 3.0, 2.0))
    T, _, _ = run_schedule(S, A.index, T, (2.0, 1.5, 1.0))
    assert np.array_equal(out.transform.as_matrix(), T.as_matrix())


def test_reverse_is_scored_forward_and_recovers_offset():
    A = PointCloud(_scene(3))
    T_true = RigidTransform.from_yaw(0.02, (0.6, 0.4, 0.0))
    S = PointCloud(T_true.inverse().apply_points(A.points))
    out = two_stage_reverse(S, A, RigidTransform.identity(), 30)
    assert np.allclose(out.transform.as_matrix(), T_true.as_matrix(), atol=1e-6)
    assert out.score == inlier_rmse(S, A.index, out.transform)
