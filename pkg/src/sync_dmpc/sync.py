"""Iterative weighted-average synchronization of per-agent predictions.

Every agent predicts state trajectories for itself and its neighbors;
concurrent planning makes those predictions disagree. Each round, every
agent replaces its value for a target with the reciprocal-weight average
of the values held by agents it shares with the target, normalized to a
convex combination. Iterating this row-stochastic update drives all
predictors of a target to a common trajectory whenever the averaging
support lets some agent's information reach every other one.

Inputs are never averaged: consumers re-plan against the synchronized
states, so only states need consensus.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar, Mapping

import numpy as np

from .coupling_graph import CouplingGraph, support_has_spanning_tree
from .vehicle_model import STATE_DIM


class SyncError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PredictionBundle:
    """States and inputs one agent computed for every agent it plans for.

    ``states[j]`` has shape (horizon, 4) over steps 1..horizon and
    ``inputs[j]`` shape (control_horizon, 2) over steps 0..control_horizon-1.
    """

    KIND: ClassVar[str] = "prediction_bundle"

    owner: int
    states: dict[int, np.ndarray]
    inputs: dict[int, np.ndarray]

    def __post_init__(self):
        if self.owner not in self.states:
            raise SyncError(f"bundle of {self.owner} lacks its own prediction")
        horizons = {v.shape for v in self.states.values()}
        if len(horizons) != 1:
            raise SyncError("prediction horizons differ inside one bundle")
        shape = next(iter(horizons))
        if len(shape) != 2 or shape[1] != STATE_DIM:
            raise SyncError("predictions must be (horizon, 4) arrays")

    @property
    def horizon(self) -> int:
        return next(iter(self.states.values())).shape[0]

    @property
    def targets(self) -> tuple[int, ...]:
        return tuple(sorted(self.states))


@dataclass(frozen=True)
class SyncConfig:
    """Componentwise agreement tolerances and the round budget."""

    pos_tol: float = 1e-4  # [m]
    speed_tol: float = 1e-4  # [m/s]
    heading_tol: float = 1e-3  # [rad]
    max_iterations: int = 500

    def __post_init__(self):
        if min(self.pos_tol, self.speed_tol, self.heading_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")

    def tol_vector(self) -> np.ndarray:
        return np.array([self.pos_tol, self.pos_tol, self.heading_tol, self.speed_tol])


def disagreement(bundles: Mapping[int, PredictionBundle]) -> dict[int, np.ndarray]:
    """Per target, the componentwise max absolute spread across predictors."""
    targets: dict[int, list[np.ndarray]] = {}
    horizon = None
    for b in bundles.values():
        if horizon is None:
            horizon = b.horizon
        elif horizon != b.horizon:
            raise SyncError("bundles have mismatched horizons")
        for j, val in b.states.items():
            targets.setdefault(j, []).append(val)
    out = {}
    for j, vals in targets.items():
        stack = np.stack(vals)
        out[j] = (stack.max(axis=0) - stack.min(axis=0)).max(axis=0)
    return out


def consistency_ratio(
    bundles: Mapping[int, PredictionBundle], cfg: SyncConfig
) -> float:
    """Largest disagreement relative to its tolerance; <= 1 means consistent."""
    tol = cfg.tol_vector()
    worst = 0.0
    for spread in disagreement(bundles).values():
        worst = max(worst, float(np.max(spread / tol)))
    return worst


def consistent(bundles: Mapping[int, PredictionBundle], cfg: SyncConfig) -> bool:
    return consistency_ratio(bundles, cfg) <= 1.0


def averaging_weights(
    graph: CouplingGraph, target: int, holders, self_weight: float = 1.0
) -> np.ndarray:
    """Normalized reciprocal coupling weights over the holder agents."""
    raw = np.array(
        [
            1.0 / (self_weight if q == target else graph.weight(q, target))
            for q in holders
        ]
    )
    return raw / raw.sum()


def sync_step(
    bundles: Mapping[int, PredictionBundle],
    graph: CouplingGraph,
    self_weight: float = 1.0,
) -> dict[int, PredictionBundle]:
    """One synchronous averaging round (all updates use the old values)."""
    new = {}
    for i in sorted(bundles):
        b = bundles[i]
        near_i = {i, *graph.neighbors(i)}
        updated = {}
        for j in sorted(b.states):
            near_j = {j, *graph.neighbors(j)}
            holders = [
                q
                for q in sorted(near_i & near_j)
                if q in bundles and j in bundles[q].states
            ]
            if not holders:
                raise SyncError(f"agent {i} has nobody to average for target {j}")
            weights = averaging_weights(graph, j, holders, self_weight)
            stack = np.stack([bundles[q].states[j] for q in holders])
            updated[j] = np.tensordot(weights, stack, axes=1)
        new[i] = PredictionBundle(i, updated, b.inputs)
    return new


def _target_supports(bundles, graph):
    """Per target: predictor ordering and the boolean receive-support."""
    out = {}
    targets = sorted({j for b in bundles.values() for j in b.states})
    for j in targets:
        preds = [i for i in sorted(bundles) if j in bundles[i].states]
        near_j = {j, *graph.neighbors(j)}
        support = np.zeros((len(preds), len(preds)), dtype=bool)
        for row, i in enumerate(preds):
            near_i = {i, *graph.neighbors(i)}
            for col, q in enumerate(preds):
                support[row, col] = q in near_i and q in near_j
        out[j] = (tuple(preds), support)
    return out


def synchronize(
    bundles: Mapping[int, PredictionBundle],
    graph: CouplingGraph,
    cfg: SyncConfig,
    self_weight: float = 1.0,
) -> dict[int, np.ndarray]:
    """Average until every predictor of every target agrees within tolerance.

    Returns one agreed trajectory per target (the target's own final
    value when it predicts itself, otherwise the lowest predictor's).
    Raises when some target's averaging support cannot reach consensus,
    or when the round budget runs out.
    """
    for j, (preds, support) in _target_supports(bundles, graph).items():
        if not support_has_spanning_tree(support):
            raise SyncError(
                f"synchronization cannot converge: support for target {j} "
                f"over predictors {preds} has no spanning tree"
            )
    cur = dict(bundles)
    if consistent(cur, cfg):
        return _extract(cur)
    for _ in range(cfg.max_iterations):
        cur = sync_step(cur, graph, self_weight)
        if consistent(cur, cfg):
            return _extract(cur)
    residual = consistency_ratio(cur, cfg)
    raise SyncError(
        f"no consensus after {cfg.max_iterations} iterations "
        f"(residual {residual:.3g} x tolerance)"
    )


def _extract(bundles: Mapping[int, PredictionBundle]) -> dict[int, np.ndarray]:
    out = {}
    targets = sorted({j for b in bundles.values() for j in b.states})
    for j in targets:
        if j in bundles and j in bundles[j].states:
            out[j] = bundles[j].states[j].copy()
        else:
            first = min(i for i in bundles if j in bundles[i].states)
            out[j] = bundles[first].states[j].copy()
    return out
