"""Local and joint cooperative optimal control problems as convex QPs.

One problem covers a set of member agents (a sub-graph for the local
problem, every agent for the joint baseline). Each member contributes a
block of predicted states x(1..N) and inputs u(0..Nu-1); the cost is the
edge-weighted sum of squared reference deviations plus squared input
variations. Dynamics enter as time-varying affine equalities linearized
along a previous trajectory, and inter-agent safety distances enter as
supporting hyperplanes of the true distance constraint, so the linear
constraint implies the nonlinear one (inner approximation).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coupling_graph import CouplingGraph, CouplingSubGraph
from .vehicle_model import INPUT_DIM, STATE_DIM, VehicleParams, linearize_array


class OcpError(ValueError):
    pass


@dataclass(frozen=True)
class OcpParams:
    """Horizons, cost weights and constraint data shared by all agents."""

    horizon: int = 8  # predicted state steps
    control_horizon: int = 3  # freely optimized input steps
    q: tuple = (1.0, 1.0, 0.0, 0.5)  # stage deviation weights [x, y, psi, v]
    q_f: tuple = (1.0, 1.0, 0.0, 0.5)  # terminal deviation weights
    r: tuple = (0.1, 0.1)  # input variation weights [a, delta]
    d_safe: float = 0.3  # minimum inter-agent center distance [m]
    arena: tuple = (0.0, 4.0, 0.0, 4.0)  # x_min, x_max, y_min, y_max
    feas_tol: float = 1e-3  # feasibility slack on boxes and distances

    def __post_init__(self):
        if not 1 <= self.control_horizon <= self.horizon:
            raise OcpError("need 1 <= control_horizon <= horizon")
        if len(self.q) != STATE_DIM or len(self.q_f) != STATE_DIM:
            raise OcpError("state weights must have 4 entries")
        if len(self.r) != INPUT_DIM:
            raise OcpError("input weights must have 2 entries")
        if min(self.q) < 0 or min(self.q_f) < 0 or min(self.r) < 0:
            raise OcpError("cost weights must be nonnegative")
        if self.d_safe <= 0:
            raise OcpError("d_safe must be positive")
        if self.arena[0] >= self.arena[1] or self.arena[2] >= self.arena[3]:
            raise OcpError("arena bounds are empty")

    @property
    def slack_penalty(self) -> float:
        return 1e4 * max(max(self.q), max(self.q_f))


@dataclass(frozen=True, eq=False)
class QuadraticProgram:
    """min 1/2 z'Hz + h'z + const  s.t.  E z = e,  G z <= g."""

    H: np.ndarray
    h: np.ndarray
    E: np.ndarray
    e: np.ndarray
    G: np.ndarray
    g: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        n = self.h.shape[0]
        if self.H.shape != (n, n):
            raise OcpError("H/h dimension mismatch")
        if float(np.max(np.abs(self.H - self.H.T), initial=0.0)) > 1e-10:
            raise OcpError("H is not symmetric")
        if self.E.shape[1] != n or self.G.shape[1] != n:
            raise OcpError("constraint matrices do not match variable count")
        if self.E.shape[0] != self.e.shape[0] or self.G.shape[0] != self.g.shape[0]:
            raise OcpError("constraint right-hand sides do not match")

    @property
    def n(self) -> int:
        return self.h.shape[0]

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.H @ z + self.h @ z + self.const)


@dataclass(frozen=True, eq=False)
class MemberPlan:
    """Per-member data needed to pose its block of the problem.

    ``lin_states`` (horizon+1, 4) and ``lin_inputs`` (horizon, 2) give the
    trajectory the dynamics and coupling constraints are linearized
    around; row 0 of ``lin_states`` is the current measured state.
    ``prev_input`` is the input applied at the previous time step, so the
    first input variation is well defined.
    """

    initial_state: np.ndarray
    reference: np.ndarray  # (horizon, 4), rows k = 1 .. horizon
    lin_states: np.ndarray
    lin_inputs: np.ndarray
    prev_input: np.ndarray
    weight: float = 1.0


@dataclass(frozen=True)
class LocalOcp:
    center: int
    members: dict[int, MemberPlan] = field(repr=False)
    pairs: tuple[tuple[int, int], ...]
    params: OcpParams
    vehicle: VehicleParams

    @property
    def member_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.members))


@dataclass(frozen=True)
class VariableLayout:
    """Column bookkeeping: per member a state block then an input block."""

    member_ids: tuple[int, ...]
    horizon: int
    control_horizon: int

    @property
    def block(self) -> int:
        return STATE_DIM * self.horizon + INPUT_DIM * self.control_horizon

    @property
    def n_vars(self) -> int:
        return self.block * len(self.member_ids)

    def _base(self, j: int) -> int:
        return self.member_ids.index(j) * self.block

    def state_cols(self, j: int, k: int) -> slice:
        """Columns of member j's state at step k (1-based, k <= horizon)."""
        if not 1 <= k <= self.horizon:
            raise OcpError(f"state step {k} outside 1..{self.horizon}")
        base = self._base(j) + STATE_DIM * (k - 1)
        return slice(base, base + STATE_DIM)

    def input_cols(self, j: int, k: int) -> slice:
        """Columns of member j's input at step k (0-based, k < control_horizon)."""
        if not 0 <= k < self.control_horizon:
            raise OcpError(f"input step {k} outside 0..{self.control_horizon - 1}")
        base = self._base(j) + STATE_DIM * self.horizon + INPUT_DIM * k
        return slice(base, base + INPUT_DIM)

    def unpack(self, z: np.ndarray) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Split a solution vector into per-member (states, inputs)."""
        out = {}
        for j in self.member_ids:
            base = self._base(j)
            xs = z[base : base + STATE_DIM * self.horizon]
            us = z[
                base
                + STATE_DIM * self.horizon : base
                + STATE_DIM * self.horizon
                + INPUT_DIM * self.control_horizon
            ]
            out[j] = (
                xs.reshape(self.horizon, STATE_DIM).copy(),
                us.reshape(self.control_horizon, INPUT_DIM).copy(),
            )
        return out


@dataclass(frozen=True, eq=False)
class BuiltQp:
    qp: QuadraticProgram
    layout: VariableLayout
    coupling_offset: int  # row of the first coupling constraint in G
    coupling_rows: int
    n_slack: int
    degenerate: tuple[tuple[int, int, int], ...]  # (j, q, k) with coincident points


def convexify_coupling(p_prev_j, p_prev_q, d_safe: float):
    """Supporting hyperplane normals for the pairwise distance constraint.

    Returns (normals, degenerate): per step k the unit vector n pointing
    from q's previous position toward j's, so n . (p_j - p_q) >= d_safe
    implies the true distance constraint by Cauchy-Schwarz. Coincident
    previous positions fall back deterministically to (1, 0) and are
    flagged in the boolean mask.
    """
    if d_safe <= 0:
        raise OcpError("d_safe must be positive")
    pj = np.asarray(p_prev_j, dtype=float).reshape(-1, 2)
    pq = np.asarray(p_prev_q, dtype=float).reshape(-1, 2)
    if pj.shape != pq.shape:
        raise OcpError("position sequences differ in length")
    diff = pj - pq
    norms = np.linalg.norm(diff, axis=1)
    degenerate = norms < 1e-9
    normals = np.zeros_like(diff)
    normals[~degenerate] = diff[~degenerate] / norms[~degenerate, None]
    normals[degenerate] = (1.0, 0.0)
    return normals, degenerate


def _member_plan_checks(ocp: LocalOcp):
    n_p = ocp.params.horizon
    for j, plan in ocp.members.items():
        if plan.reference.shape != (n_p, STATE_DIM):
            raise OcpError(f"member {j}: reference must be ({n_p}, {STATE_DIM})")
        if plan.lin_states.shape != (n_p + 1, STATE_DIM):
            raise OcpError(f"member {j}: lin_states must be ({n_p + 1}, {STATE_DIM})")
        if plan.lin_inputs.shape != (n_p, INPUT_DIM):
            raise OcpError(f"member {j}: lin_inputs must be ({n_p}, {INPUT_DIM})")
    for a, b in ocp.pairs:
        if a not in ocp.members or b not in ocp.members:
            raise OcpError(f"coupling pair ({a}, {b}) outside the member set")


def build_qp(ocp: LocalOcp, soft_coupling: bool = False) -> BuiltQp:
    """Lower the problem to numerical form.

    With ``soft_coupling`` each coupling row gets a nonnegative slack
    with a large linear penalty, which keeps the program feasible when
    the hard safety constraints conflict with the dynamics.
    """
    _member_plan_checks(ocp)
    p, veh = ocp.params, ocp.vehicle
    n_p, n_u = p.horizon, p.control_horizon
    ids = ocp.member_ids
    layout = VariableLayout(ids, n_p, n_u)
    pairs = tuple(sorted((min(a, b), max(a, b)) for a, b in ocp.pairs))
    n_coupling = len(pairs) * n_p
    n_slack = n_coupling if soft_coupling else 0
    n = layout.n_vars + n_slack

    H = np.zeros((n, n))
    h = np.zeros(n)
    const = 0.0
    E = np.zeros((STATE_DIM * n_p * len(ids), n))
    e = np.zeros(E.shape[0])
    box_rows = len(ids) * (6 * n_p + 4 * n_u + 4 * n_u)
    G = np.zeros((box_rows + n_coupling + n_slack, n))
    g = np.zeros(G.shape[0])

    q_stage = np.asarray(p.q, dtype=float)
    q_term = np.asarray(p.q_f, dtype=float)
    r_w = np.asarray(p.r, dtype=float)
    eq_row = 0
    row = 0
    for j in ids:
        plan = ocp.members[j]
        w = float(plan.weight)
        # reference deviation cost: stage weights up to the last step,
        # terminal weights at the horizon
        for k in range(1, n_p + 1):
            wk = w * (q_stage if k < n_p else q_term)
            cols = layout.state_cols(j, k)
            idx = np.arange(cols.start, cols.stop)
            H[idx, idx] += 2.0 * wk
            r_k = plan.reference[k - 1]
            h[idx] += -2.0 * wk * r_k
            const += float(wk @ (r_k * r_k))
        # input variation cost through the differencing operator
        d_op = np.eye(INPUT_DIM * n_u)
        for k in range(1, n_u):
            d_op[
                INPUT_DIM * k : INPUT_DIM * (k + 1),
                INPUT_DIM * (k - 1) : INPUT_DIM * k,
            ] -= np.eye(INPUT_DIM)
        bias = np.zeros(INPUT_DIM * n_u)
        bias[:INPUT_DIM] = plan.prev_input
        r_vec = w * np.tile(r_w, n_u)
        ucols = slice(
            layout.input_cols(j, 0).start, layout.input_cols(j, n_u - 1).stop
        )
        H[ucols, ucols] += 2.0 * (d_op.T * r_vec) @ d_op
        h[ucols] += -2.0 * d_op.T @ (r_vec * bias)
        const += float(bias @ (r_vec * bias))

        # linearized dynamics x(k+1) = A x(k) + B u(min(k, n_u-1)) + c
        for k in range(n_p):
            z_lin = plan.initial_state if k == 0 else plan.lin_states[k]
            a_mat, b_mat, c_vec = linearize_array(z_lin, plan.lin_inputs[k], veh)
            rows = slice(eq_row, eq_row + STATE_DIM)
            E[rows, layout.state_cols(j, k + 1)] = np.eye(STATE_DIM)
            E[rows, layout.input_cols(j, min(k, n_u - 1))] = -b_mat
            if k == 0:
                e[rows] = a_mat @ plan.initial_state + c_vec
            else:
                E[rows, layout.state_cols(j, k)] = -a_mat
                e[rows] = c_vec
            eq_row += STATE_DIM

        # state box (arena position window and speed bounds), every step
        # including the terminal one
        x_min, x_max, y_min, y_max = p.arena
        for k in range(1, n_p + 1):
            cols = layout.state_cols(j, k)
            base = cols.start
            for comp, lo, hi in ((0, x_min, x_max), (1, y_min, y_max), (3, veh.v_min, veh.v_max)):
                G[row, base + comp] = 1.0
                g[row] = hi
                G[row + 1, base + comp] = -1.0
                g[row + 1] = -lo
                row += 2
        # input box and input variation box over the control horizon
        lo_u, hi_u = veh.input_lower(), veh.input_upper()
        rate = veh.input_rate()
        for k in range(n_u):
            cols = layout.input_cols(j, k)
            for comp in range(INPUT_DIM):
                G[row, cols.start + comp] = 1.0
                g[row] = hi_u[comp]
                G[row + 1, cols.start + comp] = -1.0
                g[row + 1] = -lo_u[comp]
                row += 2
        for k in range(n_u):
            cols = layout.input_cols(j, k)
            prev_cols = layout.input_cols(j, k - 1) if k > 0 else None
            for comp in range(INPUT_DIM):
                G[row, cols.start + comp] = 1.0
                G[row + 1, cols.start + comp] = -1.0
                if prev_cols is None:
                    g[row] = rate[comp] + plan.prev_input[comp]
                    g[row + 1] = rate[comp] - plan.prev_input[comp]
                else:
                    G[row, prev_cols.start + comp] = -1.0
                    G[row + 1, prev_cols.start + comp] = 1.0
                    g[row] = rate[comp]
                    g[row + 1] = rate[comp]
                row += 2

    coupling_offset = row
    degenerate = []
    slack_col = layout.n_vars
    for a, b in pairs:
        normals, degen = convexify_coupling(
            ocp.members[a].lin_states[1:, :2],
            ocp.members[b].lin_states[1:, :2],
            p.d_safe,
        )
        for k in range(1, n_p + 1):
            n_vec = normals[k - 1]
            if degen[k - 1]:
                degenerate.append((a, b, k))
            ca = layout.state_cols(a, k).start
            cb = layout.state_cols(b, k).start
            # n . (p_a - p_b) >= d_safe  ->  -n.p_a + n.p_b <= -d_safe
            G[row, ca : ca + 2] = -n_vec
            G[row, cb : cb + 2] = n_vec
            g[row] = -p.d_safe
            if soft_coupling:
                G[row, slack_col] = -1.0
                h[slack_col] = p.slack_penalty
                slack_col += 1
            row += 1
    if soft_coupling:
        for i in range(n_slack):
            G[row, layout.n_vars + i] = -1.0
            g[row] = 0.0
            row += 1

    qp = QuadraticProgram(H, h, E, e, G, g, const)
    return BuiltQp(qp, layout, coupling_offset, n_coupling, n_slack, tuple(degenerate))


def build_local_ocp(
    sub: CouplingSubGraph,
    states: dict[int, np.ndarray],
    refs: dict[int, np.ndarray],
    lin_states: dict[int, np.ndarray],
    lin_inputs: dict[int, np.ndarray],
    prev_inputs: dict[int, np.ndarray],
    params: OcpParams,
    vehicle: VehicleParams,
) -> LocalOcp:
    """Problem for one agent's sub-graph: the center tracks with weight 1,
    each neighbor with the coupling weight of its shared edge."""
    members = {}
    for j in sub.node_ids:
        try:
            members[j] = MemberPlan(
                np.asarray(states[j], dtype=float),
                np.asarray(refs[j], dtype=float),
                np.asarray(lin_states[j], dtype=float),
                np.asarray(lin_inputs[j], dtype=float),
                np.asarray(prev_inputs[j], dtype=float),
                weight=1.0 if j == sub.center else sub.weight(sub.center, j),
            )
        except KeyError:
            raise OcpError(f"missing data for sub-graph member {j}") from None
    return LocalOcp(sub.center, members, sub.edges, params, vehicle)


def build_centralized_ocp(
    graph: CouplingGraph,
    states: dict[int, np.ndarray],
    refs: dict[int, np.ndarray],
    lin_states: dict[int, np.ndarray],
    lin_inputs: dict[int, np.ndarray],
    prev_inputs: dict[int, np.ndarray],
    params: OcpParams,
    vehicle: VehicleParams,
) -> LocalOcp:
    """Joint problem over every agent with unit weights and all edges."""
    members = {}
    for j in graph.node_ids:
        try:
            members[j] = MemberPlan(
                np.asarray(states[j], dtype=float),
                np.asarray(refs[j], dtype=float),
                np.asarray(lin_states[j], dtype=float),
                np.asarray(lin_inputs[j], dtype=float),
                np.asarray(prev_inputs[j], dtype=float),
                weight=1.0,
            )
        except KeyError:
            raise OcpError(f"missing data for agent {j}") from None
    return LocalOcp(min(graph.node_ids), members, graph.edges, params, vehicle)
