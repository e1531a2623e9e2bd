import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sync_dmpc.reference_gen import (
    _WORDS,
    Pose,
    dubins_shortest_path,
    path_for_word,
    sample_trajectory,
    wrap_pi,
)
from sync_dmpc.vehicle_model import VehicleParams

P = VehicleParams()

pose_st = st.tuples(
    st.floats(-4, 4), st.floats(-4, 4), st.floats(-math.pi, math.pi)
).map(lambda t: Pose(*t))


def test_straight_collinear_poses():
    path = dubins_shortest_path(Pose(0, 0, 0), Pose(5, 0, 0), 1.0)
    assert path.length == pytest.approx(5.0, abs=1e-9)
    turning = sum(seg.length for seg in path.segments if seg.kind != "S")
    assert turning == pytest.approx(0.0, abs=1e-9)


def test_degenerate_same_pose():
    path = dubins_shortest_path(Pose(1, 2, 0.7), Pose(1, 2, 0.7), 0.5)
    assert path.length == 0.0
    p = path.point_at(0.0)
    assert (p.x, p.y) == (1, 2)


def test_radius_must_be_positive():
    with pytest.raises(ValueError):
        dubins_shortest_path(Pose(0, 0, 0), Pose(1, 0, 0), 0.0)


def test_selected_word_beats_every_word():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s = Pose(*rng.uniform(-4, 4, 2), rng.uniform(-math.pi, math.pi))
        g = Pose(*rng.uniform(-4, 4, 2), rng.uniform(-math.pi, math.pi))
        r = float(rng.uniform(0.2, 1.5))
        best = dubins_shortest_path(s, g, r)
        for word in _WORDS:
            cand = path_for_word(s, g, r, word)
            if cand is not None:
                assert best.length <= cand.length + 1e-9


def test_every_word_reconstructs_the_goal():
    rng = np.random.default_rng(1)
    for _ in range(200):
        s = Pose(*rng.uniform(-4, 4, 2), rng.uniform(-math.pi, math.pi))
        g = Pose(*rng.uniform(-4, 4, 2), rng.uniform(-math.pi, math.pi))
        r = float(rng.uniform(0.2, 1.5))
        for word in _WORDS:
            cand = path_for_word(s, g, r, word)
            if cand is None:
                continue
            end = cand.point_at(cand.length)
            assert math.hypot(end.x - g.x, end.y - g.y) < 1e-9
            assert abs(wrap_pi(end.psi - g.psi)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(pose_st, pose_st, st.floats(0.3, 1.5), st.floats(-math.pi, math.pi),
       st.floats(-3, 3), st.floats(-3, 3))
def test_length_invariant_under_rigid_transform(s, g, radius, rot, tx, ty):
    def move(p):
        c, sn = math.cos(rot), math.sin(rot)
        return Pose(c * p.x - sn * p.y + tx, sn * p.x + c * p.y + ty, p.psi + rot)

    base = dubins_shortest_path(s, g, radius).length
    moved = dubins_shortest_path(move(s), move(g), radius).length
    assert moved == pytest.approx(base, abs=1e-9)


def test_distance_to_path_matches_fine_polyline():
    rng = np.random.default_rng(2)
    for _ in range(20):
        s = Pose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
        g = Pose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
        path = dubins_shortest_path(s, g, 0.5)
        samples = np.array(
            [
                (q.x, q.y)
                for q in (path.point_at(t) for t in np.linspace(0, path.length, 4000))
            ]
        )
        for _ in range(5):
            pt = rng.uniform(-3, 3, 2)
            brute = np.min(np.hypot(*(samples - pt).T))
            assert path.distance_to(pt) == pytest.approx(brute, abs=2e-4)


def test_zero_length_path_sampling():
    path = dubins_shortest_path(Pose(1, 1, 0.2), Pose(1, 1, 0.2), 0.5)
    ref = sample_trajectory(path, P, 1.0, 10)
    assert ref.states.shape == (11, 4)
    np.testing.assert_allclose(ref.states[:, 0], 1.0)
    np.testing.assert_allclose(ref.states[:, 3], 0.0)


def test_straight_path_uniform_spacing_at_cruise():
    # long straight so the cruise plateau dominates
    path = dubins_shortest_path(Pose(0, 0, 0), Pose(10, 0, 0), 0.5)
    ref = sample_trajectory(path, P, 1.0, 60)
    xs = ref.states[:, 0]
    gaps = np.diff(xs)
    at_cruise = np.isclose(ref.states[:-1, 3], 1.0)
    np.testing.assert_allclose(gaps[at_cruise], 1.0 * P.dt, atol=1e-9)


def test_sampled_arc_length_matches_path_length():
    rng = np.random.default_rng(3)
    for _ in range(10):
        s = Pose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
        g = Pose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
        path = dubins_shortest_path(s, g, P.turn_radius)
        n = int(path.length / (0.2 * P.dt)) + 20
        ref = sample_trajectory(path, P, 1.0, n)
        travel = float(np.sum(ref.states[:, 3]) * P.dt)
        assert abs(travel - path.length) <= P.v_max * P.dt + 1e-9


def test_sampled_headings_continuous():
    rng = np.random.default_rng(4)
    for _ in range(10):
        s = Pose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
        g = Pose(*rng.uniform(-2, 2, 2), rng.uniform(-math.pi, math.pi))
        path = dubins_shortest_path(s, g, P.turn_radius)
        ref = sample_trajectory(path, P, 1.0, 50)
        psi = ref.states[:, 2]
        v = ref.states[:, 3]
        curvature = 1.0 / P.turn_radius
        for k in range(len(psi) - 1):
            assert abs(psi[k + 1] - psi[k]) <= curvature * v[k] * P.dt + 1e-9


def test_goal_padding_holds_pose():
    path = dubins_shortest_path(Pose(0, 0, 0), Pose(1, 0, 0), 0.5)
    ref = sample_trajectory(path, P, 1.0, 40)
    goal = ref.goal
    assert (goal.x, goal.y) == pytest.approx((1.0, 0.0), abs=1e-9)
    tail = ref.states[-5:]
    np.testing.assert_allclose(tail[:, 0], 1.0, atol=1e-9)
    np.testing.assert_allclose(tail[:, 3], 0.0)


def test_window_clamps_to_final_sample():
    path = dubins_shortest_path(Pose(0, 0, 0), Pose(1, 0, 0), 0.5)
    ref = sample_trajectory(path, P, 1.0, 10)
    win = ref.window(9, 5)
    assert win.shape == (5, 4)
    np.testing.assert_array_equal(win[1], ref.states[-1])
