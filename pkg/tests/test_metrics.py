import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rgsr.core import PointCloud, RigidTransform
from rgsr.metrics import (AERIAL_TO_GROUND, GROUND_TO_AERIAL, InlierScore, SurveyMarkers, coverage,
                          directional_coverage, inlier_rmse, lmce, median_lower_mid, success_at, tre)


def brute_rmse(S, A, T, r_eval=2.0):
    moved = S @ T.rotation.T + T.translation
    d = np.sqrt(((moved[:, None, :] - A[None, :, :]) ** 2).sum(-1)).min(axis=1)
    inl = d[d <= r_eval]
    if len(inl) < 50:
        return math.inf, len(inl)
    return math.sqrt(float(np.mean(inl ** 2))), len(inl)


def test_identical_clouds_score_zero():
    pts = np.random.default_rng(0).uniform(0, 10, (80, 3))
    s = inlier_rmse(PointCloud(pts), PointCloud(pts).index, RigidTransform.identity())
    assert s.rmse == 0.0 and s.inlier_count == 80


def test_fewer_than_50_inliers_is_infinite():
    pts = np.random.default_rng(0).uniform(0, 10, (49, 3))
    s = inlier_rmse(PointCloud(pts), PointCloud(pts).index, RigidTransform.identity())
    assert math.isinf(s.rmse) and s.inlier_count == 49


def test_known_offsets_match_brute_force():
    A = np.c_[np.arange(60.0) * 3, np.zeros(60), np.zeros(60)]
    S = A + (0.0, 0.1, 0.0)
    s = inlier_rmse(PointCloud(S), PointCloud(A).index, RigidTransform.identity())
    want, n = brute_rmse(S, A, RigidTransform.identity())
    assert abs(s.rmse - want) <= 1e-12 and s.inlier_count == n == 60
    assert abs(s.rmse - 0.1) <= 1e-12


def test_inlier_radius_is_a_closed_ball():
    A = np.c_[np.arange(60.0) * 10, np.zeros(60), np.zeros(60)]
    S = A + (0.0, 2.0, 0.0)  # exactly r_eval away: counted
    s = inlier_rmse(PointCloud(S), PointCloud(A).index, RigidTransform.identity())
    assert s.inlier_count == 60 and s.rmse == 2.0
    S2 = A + (0.0, np.nextafter(2.0, 3.0), 0.0)
    assert math.isinf(inlier_rmse(PointCloud(S2), PointCloud(A).index, RigidTransform.identity()).rmse)


@given(st.integers(0, 2**32 - 1), st.integers(40, 300), st.integers(40, 300))
@settings(max_examples=60, deadline=None)
def test_rmse_matches_brute_force(seed, n, m):
    rng = np.random.default_rng(seed)
    S = rng.uniform(0, 8, (n, 3))
    A = rng.uniform(0, 8, (m, 3))
    T = RigidTransform.from_euler(*rng.uniform(-0.2, 0.2, 3), rng.uniform(-1, 1, 3))
    s = inlier_rmse(PointCloud(S), PointCloud(A).index, T)
    want, cnt = brute_rmse(S, A, T)
    assert s.inlier_count == cnt
    assert (math.isinf(want) and math.isinf(s.rmse)) or abs(s.rmse - want) <= 1e-12


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_rmse_invariant_to_point_order(seed):
    rng = np.random.default_rng(seed)
    S = rng.uniform(0, 5, (120, 3))
    A = PointCloud(rng.uniform(0, 5, (150, 3)))
    a = inlier_rmse(PointCloud(S), A.index, RigidTransform.identity())
    b = inlier_rmse(PointCloud(S[rng.permutation(len(S))]), A.index, RigidTransform.identity())
    assert a.inlier_count == b.inlier_count and abs(a.rmse - b.rmse) <= 1e-12


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_rmse_invariant_to_shared_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    S = rng.uniform(0, 5, (120, 3))
    A = rng.uniform(0, 5, (150, 3))
    T = RigidTransform.from_euler(*rng.uniform(-0.1, 0.1, 3), rng.uniform(-0.5, 0.5, 3))
    G = RigidTransform.from_euler(*rng.uniform(-3, 3, 3), rng.uniform(-50, 50, 3))
    a = inlier_rmse(PointCloud(S), PointCloud(A).index, T)
    b = inlier_rmse(PointCloud(S), PointCloud(G.apply_points(A)).index, G @ T)
    assert a.inlier_count == b.inlier_count
    assert (math.isinf(a.rmse) and math.isinf(b.rmse)) or abs(a.rmse - b.rmse) <= 1e-9


def test_infinite_score_orders_after_finite():
    assert InlierScore(0.9, 60) < InlierScore.failed()
    assert not InlierScore.failed() < InlierScore(0.9, 60)
    with pytest.raises(ValueError):
        InlierScore(0.5, 10)


def test_coverage_examples():
    pts = np.random.default_rng(2).uniform(0, 10, (100, 3))
    c = coverage(PointCloud(pts), PointCloud(pts).index, RigidTransform.identity(), 1.0)
    assert c.fraction == 1.0
    grid = np.array([[x, y, 0.0] for x in range(0, 50, 10) for y in range(0, 50, 10)], dtype=float)
    c = coverage(PointCloud(grid + (2.0, 0, 0)), PointCloud(grid).index, RigidTransform.identity(), 1.0)
    assert c.fraction == 0.0


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 2.0), st.floats(0.1, 2.0))
@settings(max_examples=30, deadline=None)
def test_coverage_non_decreasing_in_radius(seed, r1, r2):
    rng = np.random.default_rng(seed)
    src = PointCloud(rng.uniform(0, 10, (100, 3)))
    dst = PointCloud(rng.uniform(0, 10, (100, 3)))
    lo, hi = sorted((r1, r2))
    T = RigidTransform.identity()
    assert coverage(src, dst.index, T, lo).fraction <= coverage(src, dst.index, T, hi).fraction


def test_directional_coverage_labels_and_asymmetry():
    # the ground cloud has an extra wall the aerial cloud never saw
    rng = np.random.default_rng(4)
    terrain = np.c_[rng.uniform(0, 20, (400, 2)), np.zeros(400)]
    wall = np.c_[np.full(400, 10.0), rng.uniform(0, 20, 400), rng.uniform(2, 10, 400)]
    S = PointCloud(np.vstack([terrain, wall]))
    A = PointCloud(terrain)
    g, a = directional_coverage(S, A, RigidTransform.identity())
    assert g.direction == GROUND_TO_AERIAL and a.direction == AERIAL_TO_GROUND
    assert g.fraction < a.fraction


def test_success_at_examples():
    assert success_at([InlierScore(0.0, 60)] * 3, 0.1) == 1.0
    assert success_at([0.5, 0.8, math.inf], 0.75) == pytest.approx(1 / 3)
    assert success_at([0.75], 0.75) == 0.0  # strict


@given(st.lists(st.one_of(st.floats(0, 3), st.just(math.inf)), min_size=1, max_size=50),
       st.floats(0.01, 3), st.floats(0.01, 3))
def test_success_monotone_in_tau(vals, t1, t2):
    lo, hi = sorted((t1, t2))
    assert success_at(vals, lo) <= success_at(vals, hi)


def _markers(T_ref, n=6, seed=0):
    aerial = np.random.default_rng(seed).uniform(-20, 20, (n, 3))
    return SurveyMarkers(aerial, T_ref.inverse().apply_points(aerial))


def test_tre_examples():
    T_ref = RigidTransform.from_euler(0.01, -0.02, 0.8, (100, 50, 3))
    m = _markers(T_ref)
    assert tre(T_ref, m) == pytest.approx(0.0, abs=1e-9)
    shifted = RigidTransform.from_translation((1, 0, 0)) @ T_ref
    assert tre(shifted, m) == pytest.approx(1.0, abs=1e-12)


def test_tre_matches_independent_recomputation():
    rng = np.random.default_rng(9)
    T_ref = RigidTransform.from_euler(0.0, 0.0, 0.3, (5, 5, 1))
    m = _markers(T_ref, 7)
    T = RigidTransform.from_euler(*rng.normal(0, 0.02, 3), rng.normal(0, 1, 3)) @ T_ref
    d = sorted(math.dist(T.rotation @ s + T.translation, p) for s, p in zip(m.scan, m.aerial))
    assert tre(T, m) == pytest.approx(d[3], abs=1e-12)


def test_median_even_count_uses_central_pair():
    assert median_lower_mid([4.0, 1.0, 3.0, 2.0]) == 2.5
    assert median_lower_mid([5.0]) == 5.0


def test_tre_requires_markers():
    with pytest.raises(ValueError):
        tre(RigidTransform.identity(), SurveyMarkers(np.zeros((0, 3)), np.zeros((0, 3))))


def _odometry(n=6):
    return [RigidTransform.from_euler(0, 0, 0.1 * i, (3.0 * i, 0.5 * i, 0.0)) for i in range(n)]


def test_lmce_identical_sequences_are_zero():
    O = _odometry()
    assert np.all(lmce(O, O) == 0)


def test_lmce_gauge_invariance():
    O = _odometry()
    G = RigidTransform.from_euler(0.1, -0.2, 1.0, (100, -40, 7))
    assert np.allclose(lmce([G @ o for o in O], O), 0, atol=1e-9)


def test_lmce_single_fault_injection():
    O = _odometry()
    T = list(O)
    T[2] = RigidTransform.from_translation((0.5, 0, 0)) @ O[2]
    e = lmce(T, O)
    assert np.count_nonzero(e > 1e-12) == 2
    # by hand: only the relative motions touching pose 2 change
    want1 = np.linalg.norm((T[1].inverse() @ T[2]).translation - (O[1].inverse() @ O[2]).translation)
    want2 = np.linalg.norm((T[2].inverse() @ T[3]).translation - (O[2].inverse() @ O[3]).translation)
    assert e[1] == pytest.approx(want1, abs=1e-12) and e[2] == pytest.approx(want2, abs=1e-12)
    assert e[1] == pytest.approx(0.5, abs=1e-12)


def test_lmce_rejects_bad_lengths():
    O = _odometry()
    with pytest.raises(ValueError):
        lmce(O[:3], O)
    with pytest.raises(ValueError):
        lmce(O[:1], O[:1])
