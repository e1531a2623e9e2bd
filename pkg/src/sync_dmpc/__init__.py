"""Cooperative distributed MPC with prediction synchronization, plus a
centralized baseline, for multi-vehicle formation scenarios."""

from .coupling_graph import (
    CouplingGraph,
    CouplingSubGraph,
    GraphError,
    build_topology,
    has_spanning_tree,
    subgraph,
    sync_matrix,
)
from .experiment import (
    MetricsReport,
    RolloutResult,
    ScenarioConfig,
    ScenarioError,
    World,
    compare,
    generate_scenario,
    rollout,
)
from .ocp import OcpParams, QuadraticProgram
from .qp_solver import QpSolution, solve
from .reference_gen import Pose, ReferenceTrajectory, dubins_shortest_path, sample_trajectory
from .sync import PredictionBundle, SyncConfig, SyncError, consistent, sync_step, synchronize
from .vehicle_model import VehicleInput, VehicleParams, VehicleState, linearize, step

__all__ = [
    "CouplingGraph",
    "CouplingSubGraph",
    "GraphError",
    "MetricsReport",
    "OcpParams",
    "Pose",
    "PredictionBundle",
    "QpSolution",
    "QuadraticProgram",
    "ReferenceTrajectory",
    "RolloutResult",
    "ScenarioConfig",
    "ScenarioError",
    "SyncConfig",
    "SyncError",
    "VehicleInput",
    "VehicleParams",
    "VehicleState",
    "World",
    "build_topology",
    "compare",
    "consistent",
    "dubins_shortest_path",
    "generate_scenario",
    "has_spanning_tree",
    "linearize",
    "rollout",
    "sample_trajectory",
    "solve",
    "step",
    "subgraph",
    "sync_matrix",
    "sync_step",
    "synchronize",
]
