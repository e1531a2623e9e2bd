"""Formation-building scenarios: generation, closed-loop rollout, metrics.

Vehicles start at random collision-free poses on the driving area and
drive to a line of goal poses at the top, tracking Dubins references,
under either the distributed synchronized controller or the centralized
baseline. Metrics (cumulative path/speed deviation, iteration counts,
minimum distances, arrival) are pure functions of the trajectory log and
can be recomputed offline; wall-clock timings are kept in separate
structures and files so that all other outputs are byte-reproducible.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import ScdmpcController, build_agents
from .centralized import CmpcController
from .coupling_graph import CouplingGraph, build_topology
from .ocp import OcpParams
from .reference_gen import (
    Pose,
    ReferenceTrajectory,
    dubins_shortest_path,
    sample_trajectory,
    wrap_pi,
)
from .sync import SyncConfig
from .vehicle_model import VehicleParams, VehicleState, step


class ScenarioError(ValueError):
    pass


ARRIVAL_POS_TOL = 0.05  # [m]
ARRIVAL_HEADING_TOL = 0.05  # [rad]
PLACEMENT_ATTEMPTS = 10_000

TRAJECTORY_COLUMNS = (
    "step",
    "agent",
    "x",
    "y",
    "psi",
    "v",
    "a",
    "delta",
    "outer_iterations",
    "sync_iterations",
    "converged",
    "slack",
    "disagreement",
)
TIMING_COLUMNS = ("step", "worker", "seconds")
TRACE_COLUMNS = ("round", "sender", "receiver", "kind", "payload_bytes")


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one run; fields map 1:1 onto the
    JSON config file schema (same snake_case keys)."""

    n_agents: int = 4
    seed: int = 0
    arena_width: float = 4.0
    arena_height: float = 4.0
    topology: str = "full"
    edges: tuple = ()
    default_weight: float = 1.0
    controller: str = "scdmpc"
    max_steps: int = 60
    cruise_speed: float = 1.0
    margin: float = 0.45
    start_poses: tuple | None = None
    outer_limit: int = 10
    solver_tol: float = 1e-8
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    ocp: OcpParams = field(default_factory=OcpParams)
    sync: SyncConfig = field(default_factory=SyncConfig)

    def __post_init__(self):
        if self.n_agents < 1:
            raise ScenarioError("need at least one agent")
        if self.controller not in ("scdmpc", "cmpc"):
            raise ScenarioError(f"unknown controller {self.controller!r}")
        if self.topology not in ("full", "ring", "custom"):
            raise ScenarioError(f"unknown topology {self.topology!r}")
        if self.max_steps < 1:
            raise ScenarioError("max_steps must be positive")
        if self.margin < 0:
            raise ScenarioError("margin must be nonnegative")
        # the planning arena always matches the driving area
        arena = (0.0, self.arena_width, 0.0, self.arena_height)
        if self.ocp.arena != arena:
            self.ocp = replace(self.ocp, arena=arena)

    @property
    def agent_ids(self) -> tuple[int, ...]:
        return tuple(range(1, self.n_agents + 1))

    def graph(self) -> CouplingGraph:
        return build_topology(
            self.topology, self.agent_ids, self.edges, self.default_weight
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        for key, sub_cls in (
            ("vehicle", VehicleParams),
            ("ocp", OcpParams),
            ("sync", SyncConfig),
        ):
            if key in kwargs and isinstance(kwargs[key], dict):
                sub_known = {f.name for f in dataclasses.fields(sub_cls)}
                sub_unknown = set(kwargs[key]) - sub_known
                if sub_unknown:
                    raise ScenarioError(
                        f"unknown {key} config keys: {sorted(sub_unknown)}"
                    )
                for name, value in list(kwargs[key].items()):
                    if isinstance(value, list):
                        kwargs[key][name] = tuple(value)
                kwargs[key] = sub_cls(**kwargs[key])
        for name in ("edges", "start_poses"):
            if kwargs.get(name) is not None:
                kwargs[name] = tuple(tuple(item) for item in kwargs[name])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(str(exc)) from exc


@dataclass(eq=False)
class World:
    config: ScenarioConfig
    graph: CouplingGraph
    starts: dict[int, VehicleState]
    goals: dict[int, Pose]
    refs: dict[int, ReferenceTrajectory]


def formation_goals(cfg: ScenarioConfig) -> list[Pose]:
    """Line of goal slots at the top of the arena, facing up."""
    n = cfg.n_agents
    y = cfg.arena_height - cfg.margin
    if n == 1:
        xs = [cfg.arena_width / 2.0]
    else:
        xs = list(np.linspace(cfg.margin, cfg.arena_width - cfg.margin, n))
        if xs[1] - xs[0] < 2.0 * cfg.ocp.d_safe:
            raise ScenarioError(
                f"arena too narrow for {n} goal slots with safety "
                f"distance {cfg.ocp.d_safe}"
            )
    return [Pose(x, y, math.pi / 2.0) for x in xs]


def _sample_starts(cfg: ScenarioConfig, rng: np.random.Generator) -> list[Pose]:
    lo_x, hi_x = cfg.margin, cfg.arena_width - cfg.margin
    lo_y, hi_y = cfg.margin, cfg.arena_height - cfg.margin
    if lo_x >= hi_x or lo_y >= hi_y:
        raise ScenarioError("margin leaves no room to place agents")
    placed: list[Pose] = []
    clearance = 2.0 * cfg.ocp.d_safe
    attempts = 0
    while len(placed) < cfg.n_agents:
        if attempts >= PLACEMENT_ATTEMPTS:
            raise ScenarioError(
                f"could not place {cfg.n_agents} agents with clearance "
                f"{clearance} after {PLACEMENT_ATTEMPTS} attempts; "
                "try fewer agents or a larger arena"
            )
        attempts += 1
        cand = Pose(
            rng.uniform(lo_x, hi_x),
            rng.uniform(lo_y, hi_y),
            rng.uniform(-math.pi, math.pi),
        )
        if all(
            math.hypot(cand.x - p.x, cand.y - p.y) >= clearance for p in placed
        ):
            placed.append(cand)
    return placed


def generate_scenario(cfg: ScenarioConfig) -> World:
    """Deterministic world from the config seed."""
    rng = np.random.default_rng(cfg.seed)
    goals = formation_goals(cfg)
    if cfg.start_poses is not None:
        if len(cfg.start_poses) != cfg.n_agents:
            raise ScenarioError("start_poses length must match n_agents")
        starts = [Pose(*map(float, p)) for p in cfg.start_poses]
        clearance = 2.0 * cfg.ocp.d_safe
        for a in range(len(starts)):
            for b in range(a + 1, len(starts)):
                d = math.hypot(
                    starts[a].x - starts[b].x, starts[a].y - starts[b].y
                )
                if d < clearance:
                    raise ScenarioError(
                        f"start poses {a} and {b} closer than {clearance}"
                    )
        for p in starts:
            if not (0 <= p.x <= cfg.arena_width and 0 <= p.y <= cfg.arena_height):
                raise ScenarioError("start pose outside the arena")
    else:
        starts = _sample_starts(cfg, rng)

    # leftmost start takes the leftmost goal slot, which keeps sparse
    # topologies meaningful (mostly formation-adjacent interactions)
    order = sorted(range(cfg.n_agents), key=lambda k: (starts[k].x, starts[k].y, k))
    goal_of: dict[int, Pose] = {}
    for slot, start_idx in enumerate(order):
        goal_of[start_idx + 1] = goals[slot]

    radius = cfg.vehicle.turn_radius
    n_samples = cfg.max_steps + cfg.ocp.horizon + 2
    starts_d, refs = {}, {}
    for idx, pose in enumerate(starts):
        agent_id = idx + 1
        starts_d[agent_id] = VehicleState(pose.x, pose.y, pose.psi, 0.0)
        path = dubins_shortest_path(pose, goal_of[agent_id], radius)
        refs[agent_id] = sample_trajectory(
            path, cfg.vehicle, cfg.cruise_speed, n_samples
        )
    return World(cfg, cfg.graph(), starts_d, goal_of, refs)


# -- rollout -----------------------------------------------------------


@dataclass
class AgentMetrics:
    agent: int
    path_deviation: float  # sum of distance-to-path times dt [m s]
    speed_deviation: float  # sum of |v - v_ref| times dt [m]
    arrival_step: int | None


@dataclass
class MetricsReport:
    per_agent: list[AgentMetrics]
    mean_path_deviation: float
    mean_speed_deviation: float
    total_outer_iterations: int
    total_sync_iterations: int
    non_converged_steps: int
    min_distance: float
    min_coupled_distance: float
    steps: int
    max_step_seconds: float
    mean_step_seconds: float
    collision: bool = False


@dataclass(eq=False)
class RolloutResult:
    metrics: MetricsReport
    rows: list[tuple]
    timing: list[tuple]
    trace: list[tuple] | None
    failure: str | None

    @property
    def ok(self) -> bool:
        return self.failure is None


def _make_controller(world: World, record_trace: bool):
    cfg = world.config
    if cfg.controller == "scdmpc":
        agents = build_agents(
            world.graph,
            cfg.vehicle,
            cfg.ocp,
            cfg.sync,
            world.refs,
            cfg.outer_limit,
            cfg.solver_tol,
        )
        return ScdmpcController(world.graph, agents, record_trace)
    return CmpcController(
        world.graph, cfg.vehicle, cfg.ocp, world.refs, cfg.outer_limit, cfg.solver_tol
    )


def _arrived(state: VehicleState, goal: Pose) -> bool:
    return (
        math.hypot(state.x - goal.x, state.y - goal.y) <= ARRIVAL_POS_TOL
        and abs(wrap_pi(state.psi - goal.psi)) <= ARRIVAL_HEADING_TOL
    )


def _min_pair_distance(states: dict[int, VehicleState], pairs) -> float:
    best = math.inf
    for a, b in pairs:
        best = min(
            best, math.hypot(states[a].x - states[b].x, states[a].y - states[b].y)
        )
    return best


def rollout(world: World, record_trace: bool = False) -> RolloutResult:
    """Close the loop until every agent reaches its goal pose or the step
    budget runs out. Aborts (with a failure report) if two vehicles get
    closer than one vehicle length."""
    cfg = world.config
    controller = _make_controller(world, record_trace)
    states = dict(world.starts)
    ids = world.graph.node_ids
    all_pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1 :]]
    rows: list[tuple] = []
    timing: list[tuple] = []
    failure = None

    t = 0
    for t in range(cfg.max_steps):
        if all(_arrived(states[i], world.goals[i]) for i in ids):
            break
        inputs, diag = controller.step(t, states)
        for i in ids:
            s = states[i]
            rows.append(
                (
                    t,
                    i,
                    s.x,
                    s.y,
                    s.psi,
                    s.v,
                    inputs[i].a,
                    inputs[i].delta,
                    diag.outer_iterations,
                    diag.sync_iterations,
                    int(diag.converged),
                    diag.slack,
                    diag.disagreement_ratio,
                )
            )
        for worker, seconds in sorted(diag.agent_seconds.items()):
            timing.append((t, worker, seconds))
        states = {i: step(states[i], inputs[i], cfg.vehicle) for i in ids}
        if all_pairs and _min_pair_distance(states, all_pairs) < cfg.vehicle.length:
            failure = f"collision at step {t}"
            t += 1
            break
        t += 1
    final_step = t
    for i in ids:
        s = states[i]
        rows.append(
            (final_step, i, s.x, s.y, s.psi, s.v, 0.0, 0.0, 0, 0, 1, 0.0, 0.0)
        )

    metrics = metrics_from_rows(rows, world, timing)
    metrics.collision = failure is not None
    trace = controller.bus.trace if isinstance(controller, ScdmpcController) else None
    return RolloutResult(metrics, rows, timing, trace, failure)


def metrics_from_rows(
    rows: list[tuple], world: World, timing: list[tuple] | None = None
) -> MetricsReport:
    """Recompute every metric from a trajectory log (timings excepted:
    they come from the separate timing log when available)."""
    cfg = world.config
    ids = world.graph.node_ids
    dt = cfg.vehicle.dt
    by_agent: dict[int, list[tuple]] = {i: [] for i in ids}
    by_step: dict[int, dict[int, tuple]] = {}
    for row in rows:
        by_agent[row[1]].append(row)
        by_step.setdefault(row[0], {})[row[1]] = row

    per_agent = []
    for i in ids:
        path_dev = 0.0
        speed_dev = 0.0
        arrival = None
        for row in sorted(by_agent[i]):
            k = row[0]
            pos = (row[2], row[3])
            path_dev += world.refs[i].path.distance_to(pos) * dt
            speed_dev += abs(row[5] - world.refs[i].speed_at(k)) * dt
            state = VehicleState(row[2], row[3], row[4], row[5])
            if arrival is None and _arrived(state, world.goals[i]):
                arrival = k
        per_agent.append(AgentMetrics(i, path_dev, speed_dev, arrival))

    coupled = world.graph.edges
    all_pairs = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1 :]]
    min_dist = math.inf
    min_coupled = math.inf
    outer_total = 0
    sync_total = 0
    non_converged = 0
    for k in sorted(by_step):
        snap = by_step[k]
        pts = {i: (snap[i][2], snap[i][3]) for i in snap}
        for a, b in all_pairs:
            d = math.hypot(pts[a][0] - pts[b][0], pts[a][1] - pts[b][1])
            min_dist = min(min_dist, d)
            if (min(a, b), max(a, b)) in coupled:
                min_coupled = min(min_coupled, d)
        first = snap[min(snap)]
        outer_total += first[8]
        sync_total += first[9]
        if not first[10]:
            non_converged += 1

    steps = max(by_step) if by_step else 0
    step_seconds: dict[int, float] = {}
    for k, _worker, seconds in timing or []:
        step_seconds[k] = max(step_seconds.get(k, 0.0), seconds)
    seconds = list(step_seconds.values())
    return MetricsReport(
        per_agent=per_agent,
        mean_path_deviation=float(np.mean([m.path_deviation for m in per_agent])),
        mean_speed_deviation=float(np.mean([m.speed_deviation for m in per_agent])),
        total_outer_iterations=outer_total,
        total_sync_iterations=sync_total,
        non_converged_steps=non_converged,
        min_distance=min_dist,
        min_coupled_distance=min_coupled,
        steps=steps,
        max_step_seconds=max(seconds) if seconds else 0.0,
        mean_step_seconds=float(np.mean(seconds)) if seconds else 0.0,
    )


# -- comparison --------------------------------------------------------

COMPARE_COLUMNS = (
    "controller",
    "n_agents",
    "seeds",
    "mean_path_deviation",
    "mean_speed_deviation",
    "max_path_deviation",
    "mean_min_coupled_distance",
    "non_converged_steps",
    "mean_steps",
)
COMPARE_TIMING_COLUMNS = (
    "controller",
    "n_agents",
    "mean_max_step_seconds",
    "max_max_step_seconds",
    "mean_mean_step_seconds",
)


@dataclass(eq=False)
class CompareResult:
    runs: list[dict]
    table: list[dict]
    timing: list[dict]


def compare(
    cfg: ScenarioConfig, agent_counts: list[int], seeds: list[int]
) -> CompareResult:
    """Run both controllers over the seed list for each agent count."""
    if cfg.topology == "custom":
        raise ScenarioError("compare sweeps agent counts; use full or ring topology")
    runs = []
    for n in agent_counts:
        for seed in seeds:
            for controller in ("cmpc", "scdmpc"):
                run_cfg = replace(
                    cfg, n_agents=n, seed=seed, controller=controller
                )
                result = rollout(generate_scenario(run_cfg))
                m = result.metrics
                runs.append(
                    {
                        "controller": controller,
                        "n_agents": n,
                        "seed": seed,
                        "mean_path_deviation": m.mean_path_deviation,
                        "mean_speed_deviation": m.mean_speed_deviation,
                        "min_coupled_distance": m.min_coupled_distance,
                        "non_converged_steps": m.non_converged_steps,
                        "steps": m.steps,
                        "max_step_seconds": m.max_step_seconds,
                        "mean_step_seconds": m.mean_step_seconds,
                        "failure": result.failure or "",
                    }
                )
    table = []
    timing = []
    for controller in ("cmpc", "scdmpc"):
        for n in agent_counts:
            sel = [
                r
                for r in runs
                if r["controller"] == controller and r["n_agents"] == n
            ]
            table.append(
                {
                    "controller": controller,
                    "n_agents": n,
                    "seeds": len(sel),
                    "mean_path_deviation": float(
                        np.mean([r["mean_path_deviation"] for r in sel])
                    ),
                    "mean_speed_deviation": float(
                        np.mean([r["mean_speed_deviation"] for r in sel])
                    ),
                    "max_path_deviation": float(
                        np.max([r["mean_path_deviation"] for r in sel])
                    ),
                    "mean_min_coupled_distance": float(
                        np.mean([r["min_coupled_distance"] for r in sel])
                    ),
                    "non_converged_steps": int(
                        np.sum([r["non_converged_steps"] for r in sel])
                    ),
                    "mean_steps": float(np.mean([r["steps"] for r in sel])),
                }
            )
            timing.append(
                {
                    "controller": controller,
                    "n_agents": n,
                    "mean_max_step_seconds": float(
                        np.mean([r["max_step_seconds"] for r in sel])
                    ),
                    "max_max_step_seconds": float(
                        np.max([r["max_step_seconds"] for r in sel])
                    ),
                    "mean_mean_step_seconds": float(
                        np.mean([r["mean_step_seconds"] for r in sel])
                    ),
                }
            )
    return CompareResult(runs, table, timing)


# -- file output -------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)  # shortest exact round-trip form
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def write_rollout_files(result: RolloutResult, out_dir, write_trace: bool = False):
    """metrics.csv / trajectory.csv (byte-reproducible) plus timing.csv
    and optionally trace.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = result.metrics
    metric_rows = [
        (
            a.agent,
            a.path_deviation,
            a.speed_deviation,
            "" if a.arrival_step is None else a.arrival_step,
            m.total_outer_iterations,
            m.total_sync_iterations,
            m.non_converged_steps,
            m.min_distance,
            m.min_coupled_distance,
            m.steps,
            int(m.collision),
        )
        for a in m.per_agent
    ]
    write_csv(
        out / "metrics.csv",
        (
            "agent",
            "path_deviation",
            "speed_deviation",
            "arrival_step",
            "total_outer_iterations",
            "total_sync_iterations",
            "non_converged_steps",
            "min_distance",
            "min_coupled_distance",
            "steps",
            "collision",
        ),
        metric_rows,
    )
    write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, result.rows)
    write_csv(out / "timing.csv", TIMING_COLUMNS, result.timing)
    if write_trace and result.trace is not None:
        write_csv(out / "trace.csv", TRACE_COLUMNS, result.trace)


def write_compare_files(result: CompareResult, out_dir):
    """compare.csv / plotdata.csv (byte-reproducible) plus the timing
    tables in compare_timing.csv / plotdata_timing.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "compare.csv",
        COMPARE_COLUMNS,
        [tuple(row[c] for c in COMPARE_COLUMNS) for row in result.table],
    )
    write_csv(
        out / "compare_timing.csv",
        COMPARE_TIMING_COLUMNS,
        [tuple(row[c] for c in COMPARE_TIMING_COLUMNS) for row in result.timing],
    )
    plot_rows = []
    for series in ("mean_path_deviation", "mean_speed_deviation"):
        for row in result.table:
            plot_rows.append((series, row["controller"], row["n_agents"], row[series]))
    write_csv(out / "plotdata.csv", ("series", "controller", "n_agents", "value"), plot_rows)
    timing_rows = [
        (
            "max_step_seconds",
            row["controller"],
            row["n_agents"],
            row["mean_max_step_seconds"],
        )
        for row in result.timing
    ]
    write_csv(
        out / "plotdata_timing.csv",
        ("series", "controller", "n_agents", "value"),
        timing_rows,
    )
