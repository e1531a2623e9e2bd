import math

import numpy as np
import pytest

from sync_dmpc import qp_solver
from sync_dmpc.agent import (
    Agent,
    ScdmpcController,
    build_agents,
    trajectory_feasible,
)
from sync_dmpc.coupling_graph import CouplingGraph, subgraph
from sync_dmpc.ocp import OcpParams, build_local_ocp, build_qp
from sync_dmpc.reference_gen import Pose, dubins_shortest_path, sample_trajectory
from sync_dmpc.sync import SyncConfig
from sync_dmpc.vehicle_model import (
    VehicleParams,
    VehicleState,
    nominal_inputs,
    step,
    step_array,
)

VEH = VehicleParams()
OCP = OcpParams()
SC = SyncConfig()


def straight_mission(x, y, psi, length=2.0, cruise=1.0, n=60):
    goal = Pose(x + length * math.cos(psi), y + length * math.sin(psi), psi)
    path = dubins_shortest_path(Pose(x, y, psi), goal, VEH.turn_radius)
    return sample_trajectory(path, VEH, cruise, n)


def make_world(poses, edges, weights=None):
    ids = list(range(1, len(poses) + 1))
    es = [(a, b, 1.0 if weights is None else weights) for a, b in edges]
    graph = CouplingGraph(ids, es)
    refs = {i: straight_mission(*poses[i - 1]) for i in ids}
    agents = build_agents(graph, VEH, OCP, SC, refs)
    states = {i: VehicleState(*poses[i - 1], 0.0) for i in ids}
    return graph, agents, states, refs


# -- feasibility check -------------------------------------------------


def exact_rollout(x0, inputs):
    traj = [np.asarray(x0, float)]
    for u in inputs:
        traj.append(step_array(traj[-1], u, VEH))
    return np.array(traj)


def test_feasible_accepts_exact_rollout():
    x0 = np.array([1.0, 1.0, 0.2, 0.0])
    us = np.tile([0.5, 0.1], (OCP.horizon, 1))
    seq = exact_rollout(x0, us)
    ok = trajectory_feasible(
        {1: seq[1:]}, {1: x0}, {1: seq}, {1: us}, (), OCP, VEH
    )
    assert ok


def test_feasible_rejects_distance_violation():
    x0a = np.array([1.0, 1.0, 0.0, 0.0])
    x0b = np.array([1.0, 1.0 + OCP.d_safe / 2, 0.0, 0.0])
    us = np.tile([0.0, 0.0], (OCP.horizon, 1))
    sa, sb = exact_rollout(x0a, us), exact_rollout(x0b, us)
    ok = trajectory_feasible(
        {1: sa[1:], 2: sb[1:]},
        {1: x0a, 2: x0b},
        {1: sa, 2: sb},
        {1: us, 2: us},
        ((1, 2),),
        OCP,
        VEH,
    )
    assert not ok


def test_feasible_rejects_dynamics_residual():
    x0 = np.array([1.0, 1.0, 0.2, 0.0])
    us = np.tile([0.5, 0.1], (OCP.horizon, 1))
    seq = exact_rollout(x0, us)
    bad = seq[1:].copy()
    bad[3, 0] += 10 * OCP.feas_tol
    ok = trajectory_feasible({1: bad}, {1: x0}, {1: seq}, {1: us}, (), OCP, VEH)
    assert not ok


def test_feasible_rejects_arena_violation():
    x0 = np.array([0.0, 1.0, math.pi, 0.0])  # at the left wall facing out
    us = np.tile([1.0, 0.0], (OCP.horizon, 1))
    seq = exact_rollout(x0, us)
    ok = trajectory_feasible({1: seq[1:]}, {1: x0}, {1: seq}, {1: us}, (), OCP, VEH)
    assert not ok


# -- controller steps ---------------------------------------------------


def test_isolated_agent_tracks_reference():
    graph, agents, states, refs = make_world([(1.0, 1.0, 0.0)], [])
    ctrl = ScdmpcController(graph, agents)
    sim = dict(states)
    for t in range(10):
        inputs, diag = ctrl.step(t, sim)
        assert diag.outer_iterations == 1
        assert diag.sync_iterations == 0
        assert diag.converged
        sim = {1: step(sim[1], inputs[1], VEH)}
    # tracks the straight mission closely
    ref_pos = refs[1].states[10, :2]
    assert math.hypot(sim[1].x - ref_pos[0], sim[1].y - ref_pos[1]) < 0.05


def test_distant_agents_equal_single_agent_solution():
    graph, agents, states, refs = make_world(
        [(0.5, 0.5, 0.0), (0.5, 3.5, 0.0)], [(1, 2)]
    )
    ctrl = ScdmpcController(graph, agents)
    inputs, diag = ctrl.step(0, states)
    assert diag.converged and diag.outer_iterations == 1

    for i in (1, 2):
        g1 = CouplingGraph([i])
        cur = {i: states[i].as_array()}
        refs_w = {i: refs[i].window(0, OCP.horizon)}
        lin_s = {i: np.vstack([cur[i][None, :], refs_w[i]])}
        lin_u = {i: nominal_inputs(lin_s[i], VEH)}
        built = build_qp(
            build_local_ocp(
                subgraph(g1, i), cur, refs_w, lin_s, lin_u, {i: np.zeros(2)}, OCP, VEH
            )
        )
        sol = qp_solver.solve(built.qp)
        _, us = built.layout.unpack(sol.z)[i]
        assert abs(inputs[i].a - us[0, 0]) < 1e-6
        assert abs(inputs[i].delta - us[0, 1]) < 1e-6


def test_fully_connected_identical_weights_bundles_agree():
    poses = [(1.0, 1.0, 0.5), (3.0, 1.0, 2.5), (2.0, 3.0, -1.0)]
    graph, agents, states, _ = make_world(poses, [(1, 2), (1, 3), (2, 3)])
    ctrl = ScdmpcController(graph, agents)
    _, diag = ctrl.step(0, states)
    assert diag.sync_iterations == 0
    assert diag.converged
    bundles = [agents[i].bundle for i in (1, 2, 3)]
    for j in (1, 2, 3):
        for b in bundles[1:]:
            np.testing.assert_allclose(
                bundles[0].states[j], b.states[j], atol=1e-6
            )


def test_applied_inputs_always_within_boxes():
    # head-on conflict exercises slack and sync paths; inputs must stay
    # inside the box and rate sets at every step regardless
    poses = [(1.0, 2.0, 0.0), (3.0, 2.0, math.pi)]
    graph, agents, states, _ = make_world(poses, [(1, 2)], weights=3.0)
    # references drive through each other
    refs = {
        1: straight_mission(1.0, 2.0, 0.0),
        2: straight_mission(3.0, 2.0, math.pi),
    }
    agents = build_agents(graph, VEH, OCP, SC, refs)
    ctrl = ScdmpcController(graph, agents)
    sim = dict(states)
    last = {1: np.zeros(2), 2: np.zeros(2)}
    for t in range(10):
        inputs, _ = ctrl.step(t, sim)
        for i in (1, 2):
            u = inputs[i].as_array()
            assert VEH.a_min - 1e-12 <= u[0] <= VEH.a_max + 1e-12
            assert abs(u[1]) <= VEH.delta_max + 1e-12
            assert np.all(np.abs(u - last[i]) <= VEH.input_rate() + 1e-12)
            last[i] = u
        sim = {i: step(sim[i], inputs[i], VEH) for i in (1, 2)}


def test_head_on_conflict_synchronizes_and_stays_safe():
    poses = [(1.0, 2.0, 0.0), (3.0, 2.0, math.pi)]
    graph, _, states, _ = make_world(poses, [(1, 2)], weights=3.0)
    refs = {
        1: straight_mission(1.0, 2.0, 0.0),
        2: straight_mission(3.0, 2.0, math.pi),
    }
    agents = build_agents(graph, VEH, OCP, SC, refs)
    ctrl = ScdmpcController(graph, agents)
    sim = dict(states)
    total_sync = 0
    for t in range(14):
        inputs, diag = ctrl.step(t, sim)
        sim = {i: step(sim[i], inputs[i], VEH) for i in (1, 2)}
        if diag.converged and diag.slack <= 1e-6:
            d = math.hypot(sim[1].x - sim[2].x, sim[1].y - sim[2].y)
            assert d >= OCP.d_safe - OCP.feas_tol
            assert diag.disagreement_ratio <= 1.0 + 1e-9
        total_sync += diag.sync_iterations
    assert total_sync > 0  # asymmetric weights force synchronization


def test_exit_invariant_bundles_consistent_on_converged_steps():
    poses = [(1.0, 1.8, 0.0), (3.0, 2.2, math.pi)]
    graph, _, states, _ = make_world(poses, [(1, 2)], weights=2.0)
    refs = {
        1: straight_mission(1.0, 1.8, 0.0),
        2: straight_mission(3.0, 2.2, math.pi),
    }
    agents = build_agents(graph, VEH, OCP, SC, refs)
    ctrl = ScdmpcController(graph, agents)
    sim = dict(states)
    for t in range(10):
        inputs, diag = ctrl.step(t, sim)
        if diag.converged:
            assert diag.disagreement_ratio <= 1.0 + 1e-9
        sim = {i: step(sim[i], inputs[i], VEH) for i in (1, 2)}


def test_agent_requires_matching_subgraph_and_refs():
    g = CouplingGraph([1, 2], [(1, 2)])
    refs = {1: straight_mission(1.0, 1.0, 0.0)}
    with pytest.raises(ValueError, match="references"):
        Agent(1, subgraph(g, 1), VEH, OCP, SC, refs)
    with pytest.raises(ValueError, match="center"):
        Agent(2, subgraph(g, 1), VEH, OCP, SC, {})
