"""Per-agent cooperative controller and the synchronized outer loop.

Each time step every agent plans trajectories for its whole sub-graph,
exchanges the predictions, and the loop exits once a planning round is
globally prediction-consistent and the agreed trajectories are feasible.
When plans disagree, the predictions are synchronized to a weighted
average and the next planning round tracks (and linearizes around) the
synchronized states instead of the mission reference. With inactive
coupling constraints all local problems decouple, every predictor of an
agent computes the same block optimum, and the loop exits after a single
iteration with no synchronization rounds.

Agents interact only through bus rounds: measured states, prediction
bundles, sync values, and flooded consistency/feasibility votes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from . import qp_solver
from .coupling_graph import CouplingGraph, CouplingSubGraph
from .network_sim import ConsistencyVote, FeasibilityVote, RoundBus, flood_and
from .ocp import OcpParams, build_local_ocp, build_qp
from .reference_gen import ReferenceTrajectory
from .sync import PredictionBundle, SyncConfig, averaging_weights, consistency_ratio
from .vehicle_model import (
    INPUT_DIM,
    VehicleInput,
    VehicleParams,
    VehicleState,
    linearize_array,
    nominal_inputs,
    step_array,
)


@dataclass(frozen=True, eq=False)
class MeasuredState:
    KIND: ClassVar[str] = "measured_state"
    state: np.ndarray  # (4,)
    last_input: np.ndarray  # (2,)


@dataclass(frozen=True, eq=False)
class SyncValue:
    KIND: ClassVar[str] = "sync_value"
    values: dict  # target -> (horizon, 4) states


@dataclass
class StepDiagnostics:
    outer_iterations: int = 0
    sync_iterations: int = 0
    converged: bool = True
    disagreement_ratio: float = 0.0
    slack: float = 0.0
    agent_seconds: dict = field(default_factory=dict)
    messages: int = 0


def trajectory_feasible(
    trajectories: dict[int, np.ndarray],
    init_states: dict[int, np.ndarray],
    lin_states: dict[int, np.ndarray],
    lin_inputs: dict[int, np.ndarray],
    pairs,
    params: OcpParams,
    vehicle: VehicleParams,
) -> bool:
    """Check synchronized trajectories against the planning model.

    Feasible means: consecutive states are reachable with box-bounded
    inputs under the same linearization the plans used (small per-step
    least-squares residual), states respect the arena and speed boxes,
    and every coupled pair keeps the true Euclidean safety distance.
    All checks carry the configured feasibility tolerance.
    """
    eps = params.feas_tol
    x_min, x_max, y_min, y_max = params.arena
    lo_u, hi_u = vehicle.input_lower(), vehicle.input_upper()
    for j, traj in trajectories.items():
        if not (
            np.all(traj[:, 0] >= x_min - eps)
            and np.all(traj[:, 0] <= x_max + eps)
            and np.all(traj[:, 1] >= y_min - eps)
            and np.all(traj[:, 1] <= y_max + eps)
            and np.all(traj[:, 3] >= vehicle.v_min - eps)
            and np.all(traj[:, 3] <= vehicle.v_max + eps)
        ):
            return False
        seq = np.vstack([init_states[j][None, :], traj])
        for k in range(traj.shape[0]):
            z_lin = init_states[j] if k == 0 else lin_states[j][k]
            a_mat, b_mat, c_vec = linearize_array(z_lin, lin_inputs[j][k], vehicle)
            drift = a_mat @ seq[k] + c_vec
            resid = seq[k + 1] - drift
            # B's columns touch disjoint rows (a -> speed, delta -> heading),
            # so the least-squares input is componentwise
            u = np.array(
                [
                    resid[3] / b_mat[3, 0],
                    resid[2] / b_mat[2, 1] if abs(b_mat[2, 1]) > 1e-12 else 0.0,
                ]
            )
            u = np.clip(u, lo_u, hi_u)
            if np.max(np.abs(drift + b_mat @ u - seq[k + 1])) > eps:
                return False
    for a, b in pairs:
        gap = np.linalg.norm(
            trajectories[a][:, :2] - trajectories[b][:, :2], axis=1
        )
        if np.min(gap) < params.d_safe - eps:
            return False
    return True


class Agent:
    """One controlled vehicle: plans for its sub-graph, votes, synchronizes."""

    def __init__(
        self,
        agent_id: int,
        sub: CouplingSubGraph,
        vehicle: VehicleParams,
        params: OcpParams,
        sync_cfg: SyncConfig,
        mission_refs: dict[int, ReferenceTrajectory],
        outer_limit: int = 10,
        solver_tol: float = 1e-8,
    ):
        if sub.center != agent_id:
            raise ValueError("sub-graph center must match the agent id")
        missing = [j for j in sub.node_ids if j not in mission_refs]
        if missing:
            raise ValueError(f"agent {agent_id} lacks references for {missing}")
        self.id = agent_id
        self.sub = sub
        self.vehicle = vehicle
        self.params = params
        self.sync_cfg = sync_cfg
        self.mission_refs = mission_refs
        self.outer_limit = outer_limit
        self.solver_tol = solver_tol
        self.last_input = np.zeros(INPUT_DIM)
        self.compute_seconds = 0.0
        # per-step working data
        self.member_states: dict[int, np.ndarray] = {}
        self.member_prev_u: dict[int, np.ndarray] = {}
        self.refs_w: dict[int, np.ndarray] = {}
        self.lin_states: dict[int, np.ndarray] = {}
        self.lin_inputs: dict[int, np.ndarray] = {}
        self.bundle: PredictionBundle | None = None
        self.visible: dict[int, PredictionBundle] = {}
        self.sync_values: dict[int, np.ndarray] = {}
        self.slack_used = 0.0

    # -- step lifecycle -------------------------------------------------

    def begin_step(self, t: int, measured: dict[int, MeasuredState]):
        missing = [j for j in self.sub.node_ids if j not in measured]
        if missing:
            raise RuntimeError(f"agent {self.id} missing states from {missing}")
        n_p = self.params.horizon
        self.member_states = {j: measured[j].state.copy() for j in self.sub.node_ids}
        self.member_prev_u = {
            j: measured[j].last_input.copy() for j in self.sub.node_ids
        }
        self.refs_w = {
            j: self.mission_refs[j].window(t, n_p) for j in self.sub.node_ids
        }
        self._relinearize({j: self.refs_w[j] for j in self.sub.node_ids})
        self.bundle = None
        self.visible = {}
        self.sync_values = {}
        self.slack_used = 0.0
        self.compute_seconds = 0.0

    def _relinearize(self, trajectories: dict[int, np.ndarray]):
        self.lin_states = {}
        self.lin_inputs = {}
        for j in self.sub.node_ids:
            seq = np.vstack([self.member_states[j][None, :], trajectories[j]])
            self.lin_states[j] = seq
            self.lin_inputs[j] = nominal_inputs(seq, self.vehicle)

    def plan(self) -> PredictionBundle:
        """Solve the local problem for every sub-graph member."""
        start = time.perf_counter()
        ocp = build_local_ocp(
            self.sub,
            self.member_states,
            self.refs_w,
            self.lin_states,
            self.lin_inputs,
            self.member_prev_u,
            self.params,
            self.vehicle,
        )
        built = build_qp(ocp)
        sol = qp_solver.solve(built.qp, tol=self.solver_tol)
        self.slack_used = 0.0
        if not sol.usable():
            built = build_qp(ocp, soft_coupling=True)
            sol = qp_solver.solve(built.qp, tol=self.solver_tol)
            if built.n_slack:
                slack = sol.z[built.layout.n_vars :]
                self.slack_used = float(np.max(slack, initial=0.0))
        if not sol.usable():
            bundle = self._fallback_bundle()
        else:
            parts = built.layout.unpack(sol.z[: built.layout.n_vars])
            bundle = PredictionBundle(
                self.id,
                {j: xs for j, (xs, _) in parts.items()},
                {j: us for j, (_, us) in parts.items()},
            )
        self.compute_seconds += time.perf_counter() - start
        self.bundle = bundle
        self.visible = {self.id: bundle}
        self.sync_values = {}
        return bundle

    def _fallback_bundle(self) -> PredictionBundle:
        """Emergency plan: brake to a stop along the current heading."""
        n_p, n_u = self.params.horizon, self.params.control_horizon
        states, inputs = {}, {}
        lo, hi = self.vehicle.input_lower(), self.vehicle.input_upper()
        rate = self.vehicle.input_rate()
        for j in self.sub.node_ids:
            z = self.member_states[j].copy()
            prev = self.member_prev_u[j].copy()
            traj = np.zeros((n_p, 4))
            us = np.zeros((n_u, INPUT_DIM))
            for k in range(n_p):
                brake = max(self.vehicle.a_min, -z[3] / self.vehicle.dt)
                u = np.clip(
                    np.clip(np.array([brake, 0.0]), prev - rate, prev + rate), lo, hi
                )
                z = step_array(z, u, self.vehicle)
                traj[k] = z
                if k < n_u:
                    us[k] = u
                prev = u
            states[j], inputs[j] = traj, us
        return PredictionBundle(self.id, states, inputs)

    # -- consistency and synchronization ---------------------------------

    def receive_bundles(self, bundles: dict[int, PredictionBundle]):
        self.visible = {self.id: self.bundle, **bundles}

    def locally_consistent(self) -> bool:
        start = time.perf_counter()
        ratio = consistency_ratio(self.visible, self.sync_cfg)
        self.compute_seconds += time.perf_counter() - start
        return ratio <= 1.0

    def start_sync(self):
        self.sync_values = {j: v.copy() for j, v in self.bundle.states.items()}

    def sync_update(self, received: dict[int, dict[int, np.ndarray]]) -> bool:
        """One averaging round from neighbor values; returns whether the
        values seen this round already agreed within tolerance.

        The average is always applied: termination is a global decision
        (flooded vote over these flags), and an agent that froze on local
        agreement alone could stall agents it cannot see.
        """
        start = time.perf_counter()
        values = {self.id: self.sync_values, **received}
        tol = self.sync_cfg.tol_vector()
        agree = True
        for j in self.sub.node_ids:
            vals = [v[j] for v in values.values() if j in v]
            stack = np.stack(vals)
            spread = (stack.max(axis=0) - stack.min(axis=0)).max(axis=0)
            if np.any(spread > tol):
                agree = False
        updated = {}
        near_i = set(self.sub.node_ids)
        for j in self.sub.node_ids:
            near_j = {j, *self.sub.neighbors(j)}
            holders = [
                q for q in sorted(near_i & near_j) if q in values and j in values[q]
            ]
            weights = averaging_weights(self.sub, j, holders)
            stack = np.stack([values[q][j] for q in holders])
            updated[j] = np.tensordot(weights, stack, axes=1)
        self.sync_values = updated
        self.compute_seconds += time.perf_counter() - start
        return agree

    def agreed_states(self) -> dict[int, np.ndarray]:
        if self.sync_values:
            return {j: v.copy() for j, v in self.sync_values.items()}
        return {j: v.copy() for j, v in self.bundle.states.items()}

    # -- feasibility and reference handoff --------------------------------

    def check_feasible(self, agreed: dict[int, np.ndarray]) -> bool:
        start = time.perf_counter()
        ok = trajectory_feasible(
            agreed,
            self.member_states,
            self.lin_states,
            self.lin_inputs,
            self.sub.edges,
            self.params,
            self.vehicle,
        )
        self.compute_seconds += time.perf_counter() - start
        return ok

    def adopt_references(self, agreed: dict[int, np.ndarray]):
        """Track the agreed states next iteration: only the position and
        speed components replace the mission reference (heading carries
        no tracking weight), while the linearization follows the full
        agreed trajectories."""
        for j in self.sub.node_ids:
            self.refs_w[j] = self.refs_w[j].copy()
            self.refs_w[j][:, (0, 1, 3)] = agreed[j][:, (0, 1, 3)]
        self._relinearize(agreed)

    def applied_input(self) -> np.ndarray:
        """First own input, clipped into the box and rate sets."""
        u = self.bundle.inputs[self.id][0]
        rate = self.vehicle.input_rate()
        u = np.clip(u, self.last_input - rate, self.last_input + rate)
        u = np.clip(u, self.vehicle.input_lower(), self.vehicle.input_upper())
        self.last_input = u.copy()
        return u


def build_agents(
    graph: CouplingGraph,
    vehicle: VehicleParams,
    params: OcpParams,
    sync_cfg: SyncConfig,
    mission_refs: dict[int, ReferenceTrajectory],
    outer_limit: int = 10,
    solver_tol: float = 1e-8,
) -> dict[int, Agent]:
    from .coupling_graph import subgraph

    agents = {}
    for i in graph.node_ids:
        sub = subgraph(graph, i)
        refs = {j: mission_refs[j] for j in sub.node_ids}
        agents[i] = Agent(
            i, sub, vehicle, params, sync_cfg, refs, outer_limit, solver_tol
        )
    return agents


class ScdmpcController:
    """Drives all agents through one synchronized planning step at a time."""

    def __init__(
        self,
        graph: CouplingGraph,
        agents: dict[int, Agent],
        record_trace: bool = False,
    ):
        if set(agents) != set(graph.node_ids):
            raise ValueError("agents do not match the coupling graph")
        self.graph = graph
        self.agents = agents
        self.bus = RoundBus(graph, record_trace)

    def step(
        self, t: int, states: dict[int, VehicleState]
    ) -> tuple[dict[int, VehicleInput], StepDiagnostics]:
        agents, bus = self.agents, self.bus
        ids = self.graph.node_ids
        messages_before = bus.message_count

        payloads = {
            i: MeasuredState(states[i].as_array(), agents[i].last_input.copy())
            for i in ids
        }
        inbox = bus.broadcast(payloads)
        for i in ids:
            measured = {i: payloads[i]}
            measured.update({m.sender: m.payload for m in inbox[i]})
            agents[i].begin_step(t, measured)

        done = {i: False for i in ids}
        outer_count = {i: 0 for i in ids}
        sync_rounds = 0
        sync_failed = False
        outer_limit = max(a.outer_limit for a in agents.values())
        for _ in range(outer_limit):
            active = [i for i in ids if not done[i]]
            if not active:
                break
            for i in active:
                outer_count[i] += 1
                agents[i].plan()
            inbox = bus.exchange(
                {
                    i: {m: agents[i].bundle for m in self.graph.neighbors(i)}
                    for i in active
                }
            )
            for i in active:
                agents[i].receive_bundles(
                    {m.sender: m.payload for m in inbox[i] if m.sender in active}
                )
            plan_consistent = flood_and(
                {i: agents[i].locally_consistent() for i in active},
                bus,
                ConsistencyVote,
            )

            syncing = sorted(i for i in active if not plan_consistent[i])
            for i in syncing:
                agents[i].start_sync()
            pending = set(syncing)
            round_budget = max(a.sync_cfg.max_iterations for a in agents.values())
            while pending:
                if sync_rounds >= round_budget:
                    sync_failed = True
                    break
                inbox = bus.exchange(
                    {
                        i: {
                            m: SyncValue(agents[i].sync_values)
                            for m in self.graph.neighbors(i)
                            if m in pending
                        }
                        for i in sorted(pending)
                    }
                )
                agreed_now = {}
                for i in sorted(pending):
                    received = {
                        m.sender: m.payload.values
                        for m in inbox[i]
                        if m.sender in pending
                    }
                    agreed_now[i] = agents[i].sync_update(received)
                votes = flood_and(agreed_now, bus, ConsistencyVote)
                finished = {i for i in pending if votes[i]}
                if finished != pending:
                    sync_rounds += 1
                pending -= finished
            if sync_failed:
                break

            feas = {
                i: agents[i].check_feasible(agents[i].agreed_states())
                for i in active
            }
            feas = flood_and(feas, bus, FeasibilityVote)
            for i in active:
                if plan_consistent[i] and feas[i]:
                    done[i] = True
                else:
                    agents[i].adopt_references(agents[i].agreed_states())

        inputs = {}
        for i in ids:
            if agents[i].bundle is None:
                agents[i].plan()
            inputs[i] = VehicleInput.from_array(agents[i].applied_input())

        final_bundles = {i: agents[i].bundle for i in ids}
        diag = StepDiagnostics(
            outer_iterations=max(outer_count.values()),
            sync_iterations=sync_rounds,
            converged=all(done.values()) and not sync_failed,
            disagreement_ratio=consistency_ratio(
                final_bundles, next(iter(agents.values())).sync_cfg
            ),
            slack=max(agents[i].slack_used for i in ids),
            agent_seconds={i: agents[i].compute_seconds for i in ids},
            messages=bus.message_count - messages_before,
        )
        return inputs, diag
