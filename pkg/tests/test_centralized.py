import math

import numpy as np

from sync_dmpc.agent import ScdmpcController, build_agents
from sync_dmpc.centralized import CmpcController, cmpc_step
from sync_dmpc.coupling_graph import CouplingGraph
from sync_dmpc.ocp import OcpParams
from sync_dmpc.reference_gen import Pose, dubins_shortest_path, sample_trajectory
from sync_dmpc.sync import SyncConfig
from sync_dmpc.vehicle_model import VehicleParams, VehicleState, step

VEH = VehicleParams()
OCP = OcpParams()
SC = SyncConfig()


def mission(x, y, psi, length=2.0, cruise=1.0, n=60):
    goal = Pose(x + length * math.cos(psi), y + length * math.sin(psi), psi)
    path = dubins_shortest_path(Pose(x, y, psi), goal, VEH.turn_radius)
    return sample_trajectory(path, VEH, cruise, n)


def test_single_agent_matches_distributed():
    graph = CouplingGraph([1])
    refs = {1: mission(1.0, 1.0, 0.3)}
    cm = CmpcController(graph, VEH, OCP, refs)
    sd = ScdmpcController(graph, build_agents(graph, VEH, OCP, SC, refs))
    s_cm = {1: VehicleState(1.0, 1.0, 0.3, 0.0)}
    s_sd = {1: VehicleState(1.0, 1.0, 0.3, 0.0)}
    for t in range(8):
        u_cm, _ = cm.step(t, s_cm)
        u_sd, _ = sd.step(t, s_sd)
        assert abs(u_cm[1].a - u_sd[1].a) < 1e-6
        assert abs(u_cm[1].delta - u_sd[1].delta) < 1e-6
        s_cm = {1: step(s_cm[1], u_cm[1], VEH)}
        s_sd = {1: step(s_sd[1], u_sd[1], VEH)}


def test_disconnected_pair_equals_independent_solves():
    graph = CouplingGraph([1, 2])  # no coupling
    refs = {1: mission(0.5, 0.5, 0.0), 2: mission(3.5, 3.5, math.pi)}
    cm = CmpcController(graph, VEH, OCP, refs)
    states = {
        1: VehicleState(0.5, 0.5, 0.0, 0.0),
        2: VehicleState(3.5, 3.5, math.pi, 0.0),
    }
    joint = cmpc_step(cm, 0, states)
    for i in (1, 2):
        solo_graph = CouplingGraph([i])
        solo = CmpcController(solo_graph, VEH, OCP, {i: refs[i]})
        alone = cmpc_step(solo, 0, {i: states[i]})
        assert abs(joint[i].a - alone[i].a) < 1e-6
        assert abs(joint[i].delta - alone[i].delta) < 1e-6


def test_near_agents_keep_safety_distance():
    # opposing straight missions through each other
    graph = CouplingGraph([1, 2], [(1, 2)])
    refs = {1: mission(1.0, 2.0, 0.0), 2: mission(3.0, 2.0, math.pi)}
    cm = CmpcController(graph, VEH, OCP, refs)
    states = {
        1: VehicleState(1.0, 2.0, 0.0, 0.0),
        2: VehicleState(3.0, 2.0, math.pi, 0.0),
    }
    min_d = math.inf
    for t in range(14):
        inputs, diag = cm.step(t, states)
        states = {i: step(states[i], inputs[i], VEH) for i in (1, 2)}
        d = math.hypot(states[1].x - states[2].x, states[1].y - states[2].y)
        if diag.slack <= 1e-6:
            min_d = min(min_d, d)
    assert min_d >= OCP.d_safe - OCP.feas_tol


def test_joint_cost_not_worse_than_sum_of_local(tmp_path):
    # convex instance (inactive coupling) on a fully connected pair: the
    # joint optimum cannot exceed the coordinated local costs
    from sync_dmpc import qp_solver
    from sync_dmpc.ocp import build_centralized_ocp, build_qp
    from sync_dmpc.vehicle_model import nominal_inputs

    graph = CouplingGraph([1, 2], [(1, 2)])
    refs = {1: mission(0.5, 0.5, 0.0), 2: mission(0.5, 3.5, 0.0)}
    states = {
        1: np.array([0.5, 0.5, 0.0, 0.0]),
        2: np.array([0.5, 3.5, 0.0, 0.0]),
    }
    refs_w = {i: refs[i].window(0, OCP.horizon) for i in (1, 2)}
    lin_s = {i: np.vstack([states[i][None, :], refs_w[i]]) for i in (1, 2)}
    lin_u = {i: nominal_inputs(lin_s[i], VEH) for i in (1, 2)}
    prev = {i: np.zeros(2) for i in (1, 2)}
    built = build_qp(
        build_centralized_ocp(graph, states, refs_w, lin_s, lin_u, prev, OCP, VEH)
    )
    sol = qp_solver.solve(built.qp)
    joint_cost = built.qp.objective(sol.z)

    sd = ScdmpcController(graph, build_agents(graph, VEH, OCP, SC, refs))
    sd.step(0, {i: VehicleState(*states[i]) for i in (1, 2)})
    z_parts = []
    for i in (1, 2):
        xs, us = sd.agents[i].bundle.states[i], sd.agents[i].bundle.inputs[i]
        z_parts.append(np.concatenate([xs.reshape(-1), us.reshape(-1)]))
    local_cost = built.qp.objective(np.concatenate(z_parts))
    assert joint_cost <= local_cost + 1e-6
