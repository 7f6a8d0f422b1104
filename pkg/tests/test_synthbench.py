import math

import numpy as np
import pytest

from rgsr.core import RigidTransform
from rgsr.metrics import directional_coverage
from rgsr.synthbench.pairs import CROP_RADIUS, MIN_MARKERS, PROTOCOL_A, JitterSpec, make_pair, odometry_chain
from rgsr.synthbench.scene import (Building, SceneError, SceneSpec, WorldModel, crop_xy, format_scene_config,
                                   generate_aerial, generate_scene, parse_scene_config, path_poses, preset,
                                   simulate_ground_scan_world)

EMPTY = dict(n_buildings=0, n_trees=0, n_low=0, n_bumps=0, slope_x=0.0, slope_y=0.0)


def bare_world(buildings=(), **kw):
    spec = SceneSpec(**{**EMPTY, "aerial_noise": 0.0, "ground_noise": 0.0, **kw})
    return WorldModel(spec, np.zeros((0, 4)), list(buildings), [], [], np.zeros((4, 2)))


def test_pure_terrain_density_within_ten_percent():
    w = bare_world(extent=60.0, aerial_density=3.0)
    a = generate_aerial(w, np.random.default_rng(0))
    assert abs(len(a) / 60.0 ** 2 - 3.0) <= 0.3
    assert np.all(a.points[:, 2] == 0.0)


def test_density_four_over_hundred_meters():
    w = bare_world(extent=100.0, aerial_density=4.0)
    assert abs(len(generate_aerial(w, np.random.default_rng(1))) - 40_000) <= 2_000


def test_single_building_has_roof_but_no_walls():
    b = Building(0.0, 0.0, 5.0, 5.0, 0.0, 8.0)
    a = generate_aerial(bare_world([b], extent=60.0), np.random.default_rng(2)).points
    on_roof = a[:, 2] == 8.0
    assert on_roof.sum() > 0.5 * 4.0 * 100
    assert np.all(np.abs(a[on_roof, :2]) <= 5.0)
    # everything else is terrain outside the footprint: no samples at intermediate heights
    assert np.all(a[~on_roof, 2] == 0.0)
    assert not np.any(np.all(np.abs(a[~on_roof, :2]) < 5.0, axis=1))


def test_density_outside_range_rejected():
    with pytest.raises(SceneError):
        SceneSpec(aerial_density=1.0)
    with pytest.raises(SceneError):
        SceneSpec(extent=0.0)


def test_open_terrain_scan_is_only_terrain():
    w = bare_world(extent=200.0)
    pts = simulate_ground_scan_world(w, (0.0, 0.0, 1.8), rng=np.random.default_rng(0))
    assert len(pts) > 0 and np.all(pts[:, 2] == 0.0)


def test_tall_building_gives_facade_but_no_roof():
    b = Building(20.0, 0.0, 5.0, 5.0, 0.0, 20.0)
    w = bare_world([b], extent=200.0)
    pts = simulate_ground_scan_world(w, (0.0, 0.0, 1.8), rng=np.random.default_rng(0))
    near = np.abs(pts[:, 0] - 15.0) < 0.1
    assert np.count_nonzero(near & (pts[:, 2] > 1.0)) > 50
    assert not np.any(pts[:, 2] >= 20.0 - 1e-9)


def test_sensor_inside_building_rejected():
    w = bare_world([Building(0.0, 0.0, 5.0, 5.0, 0.0, 8.0)])
    with pytest.raises(SceneError):
        simulate_ground_scan_world(w, (0.0, 0.0, 1.8))


def test_jitter_ranges_over_thousand_draws():
    j = JitterSpec()
    d = np.array([j.draw(i) for i in range(1000)])
    assert np.all(np.abs(d[:, :2]) <= 5.0) and np.all(np.abs(d[:, 2]) <= math.radians(15))
    assert np.abs(d[:, :2]).max() > 4.9  # the full range is actually used
    T_ref = RigidTransform.from_euler(0.02, -0.03, 1.0, (10, 20, 3))
    for i in range(50):
        T = j.apply(T_ref, i)
        assert T.translation[2] == T_ref.translation[2]
        # only a rotation about world z was added
        assert np.allclose((T.rotation @ T_ref.rotation.T)[2], [0, 0, 1], atol=1e-12)


def test_jitter_draws_are_reproducible_and_per_scan():
    a = [JitterSpec().draw(i) for i in range(10)]
    assert a == [JitterSpec().draw(i) for i in range(10)]
    assert JitterSpec().draw(5) == a[5]  # independent of how many scans were drawn before
    assert JitterSpec(seed=43).draw(0) != a[0]


def test_protocol_a_is_identity(open_world):
    T = path_poses(open_world, 3)[0]
    p = make_pair(open_world, T, JitterSpec(protocol=PROTOCOL_A), 0)
    assert p.T_init is T or np.array_equal(p.T_init.as_matrix(), T.as_matrix())


def test_crop_markers_and_frames(open_pair, open_world):
    c = open_pair.T_ref.translation[:2]
    d = np.hypot(*(open_world.aerial.points[:, :2] - c).T)
    assert len(open_pair.A) == int(np.count_nonzero(d <= CROP_RADIUS))
    assert np.array_equal(open_pair.A.points, crop_xy(open_world.aerial, c, CROP_RADIUS).points)
    m = open_pair.markers
    assert len(m.aerial) >= MIN_MARKERS
    assert np.allclose(open_pair.T_ref.apply_points(m.scan), m.aerial, atol=1e-9)


def test_scene_generation_is_deterministic():
    a1, _ = generate_scene(preset("bench-open", 5))
    a2, _ = generate_scene(preset("bench-open", 5))
    assert a1.points.tobytes() == a2.points.tobytes()
    a3, _ = generate_scene(preset("bench-open", 6))
    assert a3.points.shape != a1.points.shape or not np.array_equal(a3.points, a1.points)


def test_config_round_trip_and_errors():
    spec = preset("bench-facade", 3)
    assert parse_scene_config(format_scene_config(spec)) == spec
    assert parse_scene_config("preset = open\nrng_seed = 4\n") == preset("open", 4)
    for bad in ("nonsense", "wat = 3", "n_trees = many"):
        with pytest.raises(SceneError):
            parse_scene_config(bad)
    with pytest.raises(SceneError):
        preset("nowhere")


def test_odometry_chain_starts_at_truth_and_drifts_slowly():
    poses = [RigidTransform.from_yaw(0.05 * i, (2.0 * i, 0, 0)) for i in range(10)]
    odo = odometry_chain(poses, 0)
    assert odo[0] is poses[0]
    drift = [np.linalg.norm(o.translation - p.translation) for o, p in zip(odo, poses)]
    assert max(drift) < 0.5


def test_campus_scan_size_and_coverage_direction():
    _, w = generate_scene(preset("campus", 0))
    pose = path_poses(w, 5)[0]
    p = make_pair(w, pose, JitterSpec(protocol=PROTOCOL_A), 0)
    assert 10_000 <= len(p.S) <= 30_000
    g2a, a2g = directional_coverage(p.S, p.A, p.T_ref)
    assert g2a.fraction < a2g.fraction
