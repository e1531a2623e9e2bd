import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sync_dmpc.vehicle_model import (
    VehicleInput,
    VehicleParams,
    VehicleState,
    linearize,
    linearize_array,
    nominal_inputs,
    step,
    step_array,
)

from oracles import finite_difference_jacobians

P = VehicleParams()


def test_zero_motion_fixed_point():
    s = VehicleState(1.0, 2.0, 0.3, 0.0)
    assert step(s, VehicleInput(0.0, 0.0), P) == s


def test_straight_line_motion():
    s = VehicleState(0.0, 0.0, 0.0, 1.0)
    p = VehicleParams(dt=0.1)
    nxt = step(s, VehicleInput(0.0, 0.0), p)
    assert nxt == VehicleState(0.1, 0.0, 0.0, 1.0)


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        step_array([np.nan, 0, 0, 0], [0, 0], P)


def test_constant_steering_traces_a_circle():
    # against the analytic continuous-time circle, with dt refinement to
    # confirm the O(dt) Euler error order
    delta, v = 0.4, 1.0
    radius = P.wheelbase / math.tan(delta)
    errs = []
    for dt in (0.02, 0.01, 0.005):
        p = VehicleParams(dt=dt)
        z = np.array([0.0, 0.0, 0.0, v])
        u = np.array([0.0, delta])
        worst = 0.0
        for _ in range(int(1.0 / dt)):
            z = step_array(z, u, p)
            # analytic circle center for a left turn from the origin
            center = np.array([0.0, radius])
            worst = max(worst, abs(np.hypot(*(z[:2] - center)) - radius))
        errs.append(worst)
    assert errs[0] < 0.1
    assert errs[2] < errs[0] / 2  # shrinks with dt


def test_linearization_exact_at_nominal_point():
    z = np.array([0.4, -0.2, 0.9, 0.7])
    u = np.array([0.3, -0.2])
    a, b, c = linearize_array(z, u, P)
    np.testing.assert_allclose(a @ z + b @ u + c, step_array(z, u, P), atol=1e-15)


def test_heading_input_jacobian_at_zero_steering():
    s = VehicleState(0.0, 0.0, 0.0, 1.2)
    _, b, _ = linearize(s, VehicleInput(0.0, 0.0), P)
    assert b[2, 1] == pytest.approx(P.dt * 1.2 / P.wheelbase)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-3, 3),
    st.floats(-3, 3),
    st.floats(-6, 6),
    st.floats(0.0, 1.5),
    st.floats(-1.5, 1.5),
    st.floats(-0.6, 0.6),
)
def test_jacobians_match_finite_differences(x, y, psi, v, a_in, delta):
    z = np.array([x, y, psi, v])
    u = np.array([a_in, delta])
    a, b, _ = linearize_array(z, u, P)
    fa, fb = finite_difference_jacobians(lambda zz, uu: step_array(zz, uu, P), z, u)
    scale = max(1.0, np.abs(a).max())
    assert np.max(np.abs(a - fa)) <= 1e-5 * scale
    assert np.max(np.abs(b - fb)) <= 1e-5 * max(1.0, np.abs(b).max())


def test_step_reproducible():
    z = np.array([0.1, 0.2, 0.3, 0.4])
    u = np.array([0.5, -0.1])
    first = step_array(z, u, P)
    for _ in range(5):
        np.testing.assert_array_equal(step_array(z, u, P), first)


def test_nominal_inputs_recover_rollout():
    p = VehicleParams()
    z = np.array([0.0, 0.0, 0.2, 0.4])
    us = np.array([[0.5, 0.1], [0.3, -0.2], [0.0, 0.3]])
    traj = [z]
    for u in us:
        traj.append(step_array(traj[-1], u, p))
    rec = nominal_inputs(np.array(traj), p)
    np.testing.assert_allclose(rec, us, atol=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        VehicleParams(wheelbase=0.0)
    with pytest.raises(ValueError):
        VehicleParams(v_min=2.0, v_max=1.0)
