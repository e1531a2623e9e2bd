"""Centralized MPC baseline: one joint problem over all agents per step.

Uses the same builders, solver, convexification and feasibility test as
the distributed controller, with unit weights and every coupling edge in
a single program, so head-to-head comparisons isolate the effect of
distribution. Linearization starts at the mission references and is
refreshed at the previous solution until the solution passes the
feasibility check or stops changing.
"""
from __future__ import annotations

import time

import numpy as np

from . import qp_solver
from .agent import StepDiagnostics, trajectory_feasible
from .coupling_graph import CouplingGraph
from .ocp import OcpParams, build_centralized_ocp, build_qp
from .reference_gen import ReferenceTrajectory
from .vehicle_model import (
    INPUT_DIM,
    VehicleInput,
    VehicleParams,
    VehicleState,
    nominal_inputs,
)


class CmpcController:
    def __init__(
        self,
        graph: CouplingGraph,
        vehicle: VehicleParams,
        params: OcpParams,
        mission_refs: dict[int, ReferenceTrajectory],
        outer_limit: int = 10,
        solver_tol: float = 1e-8,
    ):
        missing = [j for j in graph.node_ids if j not in mission_refs]
        if missing:
            raise ValueError(f"missing references for agents {missing}")
        self.graph = graph
        self.vehicle = vehicle
        self.params = params
        self.mission_refs = mission_refs
        self.outer_limit = outer_limit
        self.solver_tol = solver_tol
        self.last_inputs = {i: np.zeros(INPUT_DIM) for i in graph.node_ids}

    def step(
        self, t: int, states: dict[int, VehicleState]
    ) -> tuple[dict[int, VehicleInput], StepDiagnostics]:
        start = time.perf_counter()
        ids = self.graph.node_ids
        n_p = self.params.horizon
        cur = {i: states[i].as_array() for i in ids}
        refs_w = {i: self.mission_refs[i].window(t, n_p) for i in ids}
        lin_states = {
            i: np.vstack([cur[i][None, :], refs_w[i]]) for i in ids
        }
        lin_inputs = {i: nominal_inputs(lin_states[i], self.vehicle) for i in ids}

        slack = 0.0
        iterations = 0
        converged = False
        trajectories: dict[int, np.ndarray] = {}
        inputs_arr: dict[int, np.ndarray] = {}
        prev_traj: dict[int, np.ndarray] | None = None
        for iterations in range(1, self.outer_limit + 1):
            ocp = build_centralized_ocp(
                self.graph,
                cur,
                refs_w,
                lin_states,
                lin_inputs,
                self.last_inputs,
                self.params,
                self.vehicle,
            )
            built = build_qp(ocp)
            sol = qp_solver.solve(built.qp, tol=self.solver_tol)
            slack = 0.0
            if not sol.usable():
                built = build_qp(ocp, soft_coupling=True)
                sol = qp_solver.solve(built.qp, tol=self.solver_tol)
                if built.n_slack:
                    slack = float(
                        np.max(sol.z[built.layout.n_vars :], initial=0.0)
                    )
            if not sol.usable():
                break
            parts = built.layout.unpack(sol.z[: built.layout.n_vars])
            trajectories = {i: xs for i, (xs, _) in parts.items()}
            inputs_arr = {i: us for i, (_, us) in parts.items()}
            if trajectory_feasible(
                trajectories,
                cur,
                lin_states,
                lin_inputs,
                self.graph.edges,
                self.params,
                self.vehicle,
            ):
                converged = True
                break
            if prev_traj is not None:
                change = max(
                    float(np.max(np.abs(trajectories[i][:, :2] - prev_traj[i][:, :2])))
                    for i in ids
                )
                if change < self.params.feas_tol:
                    converged = True
                    break
            prev_traj = trajectories
            lin_states = {
                i: np.vstack([cur[i][None, :], trajectories[i]]) for i in ids
            }
            lin_inputs = {i: nominal_inputs(lin_states[i], self.vehicle) for i in ids}

        inputs = {}
        for i in ids:
            if i in inputs_arr:
                u = inputs_arr[i][0]
            else:
                u = np.array([max(self.vehicle.a_min, -cur[i][3] / self.vehicle.dt), 0.0])
            rate = self.vehicle.input_rate()
            u = np.clip(u, self.last_inputs[i] - rate, self.last_inputs[i] + rate)
            u = np.clip(u, self.vehicle.input_lower(), self.vehicle.input_upper())
            self.last_inputs[i] = u.copy()
            inputs[i] = VehicleInput.from_array(u)

        elapsed = time.perf_counter() - start
        diag = StepDiagnostics(
            outer_iterations=iterations,
            sync_iterations=0,
            converged=converged,
            disagreement_ratio=0.0,
            slack=slack,
            agent_seconds={0: elapsed},
            messages=0,
        )
        return inputs, diag


def cmpc_step(
    controller: CmpcController, t: int, states: dict[int, VehicleState]
) -> dict[int, VehicleInput]:
    """Convenience wrapper returning just the applied inputs."""
    inputs, _ = controller.step(t, states)
    return inputs
