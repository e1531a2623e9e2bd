"""Weighted undirected coupling topology between agents.

The graph stores which agents plan for each other and how strongly an
agent weighs a neighbor's objective. Sub-graphs are closed neighborhoods:
one agent, its neighbors, and every edge among them. The module also
builds the per-target row-stochastic averaging matrices that drive state
synchronization, and checks the spanning-tree condition under which that
averaging converges.
"""
from __future__ import annotations

from collections import deque
from typing import Iterable, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    pass


def _normalize_edges(edges) -> dict[tuple[int, int], float]:
    out: dict[tuple[int, int], float] = {}
    for item in edges:
        if len(item) == 2:
            i, j = item
            w = 1.0
        else:
            i, j, w = item
        i, j = int(i), int(j)
        if i == j:
            raise GraphError(f"self-loop on agent {i} is not allowed")
        key = (min(i, j), max(i, j))
        w = float(w)
        if w <= 0:
            raise GraphError(f"edge {key} has non-positive weight {w}")
        if key in out and out[key] != w:
            raise GraphError(f"conflicting weights for edge {key}")
        out[key] = w
    return out


class CouplingGraph:
    """Undirected graph with strictly positive symmetric edge weights."""

    def __init__(self, nodes: Iterable[int], edges: Iterable = ()):
        self._nodes = tuple(sorted(int(n) for n in set(nodes)))
        if not self._nodes:
            raise GraphError("graph must contain at least one agent")
        known = set(self._nodes)
        self._weights = _normalize_edges(edges)
        self._adj: dict[int, dict[int, float]] = {n: {} for n in self._nodes}
        for (i, j), w in self._weights.items():
            if i not in known or j not in known:
                raise GraphError(f"edge ({i}, {j}) references unknown agent")
            self._adj[i][j] = w
            self._adj[j][i] = w

    @property
    def node_ids(self) -> tuple[int, ...]:
        return self._nodes

    @property
    def edges(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self._weights))

    def weight(self, i: int, j: int) -> float:
        key = (min(i, j), max(i, j))
        try:
            return self._weights[key]
        except KeyError:
            raise GraphError(f"no edge between agents {i} and {j}") from None

    def neighbors(self, i: int) -> tuple[int, ...]:
        if i not in self._adj:
            raise GraphError(f"unknown agent id {i}")
        return tuple(sorted(self._adj[i]))

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self._weights

    def __contains__(self, i: int) -> bool:
        return i in self._adj

    def __len__(self) -> int:
        return len(self._nodes)

    def diameter(self) -> int:
        """Longest shortest path, maximized over connected components."""
        best = 0
        for src in self._nodes:
            dist = {src: 0}
            q = deque([src])
            while q:
                cur = q.popleft()
                for nxt in self._adj[cur]:
                    if nxt not in dist:
                        dist[nxt] = dist[cur] + 1
                        q.append(nxt)
            best = max(best, max(dist.values()))
        return best


class CouplingSubGraph(CouplingGraph):
    """Closed neighborhood of one agent with all internal edges."""

    def __init__(self, center: int, nodes, edges):
        super().__init__(nodes, edges)
        if center not in self:
            raise GraphError(f"center {center} missing from sub-graph nodes")
        self.center = center


def subgraph(g: CouplingGraph, i: int) -> CouplingSubGraph:
    """Restrict ``g`` to agent ``i``, its neighbors, and edges among them."""
    if i not in g:
        raise GraphError(f"unknown agent id {i}")
    members = {i, *g.neighbors(i)}
    edges = [
        (a, b, g.weight(a, b)) for a, b in g.edges if a in members and b in members
    ]
    return CouplingSubGraph(i, members, edges)


def has_spanning_tree(g: CouplingGraph) -> bool:
    """True iff some agent reaches every other one; for an undirected
    graph this is plain connectivity. A single node counts as a tree."""
    nodes = g.node_ids
    seen = {nodes[0]}
    q = deque([nodes[0]])
    while q:
        cur = q.popleft()
        for nxt in g.neighbors(cur):
            if nxt not in seen:
                seen.add(nxt)
                q.append(nxt)
    return len(seen) == len(nodes)


def predictors_of(subgraphs: Mapping[int, CouplingSubGraph], target: int) -> tuple[int, ...]:
    """Agents whose sub-graph contains ``target`` (they plan states for it)."""
    return tuple(sorted(i for i, sg in subgraphs.items() if target in sg))


def sync_matrix(
    subgraphs: Mapping[int, CouplingSubGraph],
    target: int,
    self_weight: float = 1.0,
) -> tuple[tuple[int, ...], np.ndarray]:
    """Row-stochastic averaging matrix for one target agent.

    Row ``i`` holds the weights agent ``i`` applies to the predictions of
    every agent ``q`` it shares with the target's sub-graph, proportional
    to the reciprocal coupling weight 1/w(q, target) (the target's own
    prediction enters with ``self_weight``). Rows are normalized to sum
    to one, which makes repeated application a consensus iteration.

    Returns the predictor ordering and the matrix over it.
    """
    preds = predictors_of(subgraphs, target)
    if not preds:
        raise GraphError(f"agent {target} has no predictors")
    if target not in subgraphs:
        raise GraphError(f"no sub-graph given for target {target}")
    target_members = set(subgraphs[target].node_ids)
    index = {q: col for col, q in enumerate(preds)}
    m = np.zeros((len(preds), len(preds)))
    for row, i in enumerate(preds):
        shared = [q for q in subgraphs[i].node_ids if q in target_members and q in index]
        for q in shared:
            if q == target:
                w = self_weight
            else:
                w = subgraphs[target].weight(q, target)
            m[row, index[q]] = 1.0 / w
        total = m[row].sum()
        if total <= 0:
            raise GraphError(f"predictor {i} shares no agents with target {target}")
        m[row] /= total
    return preds, m


def support_has_spanning_tree(support: np.ndarray) -> bool:
    """Spanning-tree condition on a directed averaging support.

    ``support[i, q]`` true means row agent ``i`` receives agent ``q``'s
    value. Returns True iff some root's value can propagate to every
    agent through the receive relation.
    """
    support = np.asarray(support, dtype=bool)
    n = support.shape[0]
    if n == 0:
        raise GraphError("empty support")
    for root in range(n):
        reached = {root}
        q = deque([root])
        while q:
            cur = q.popleft()
            for i in range(n):
                if support[i, cur] and i not in reached:
                    reached.add(i)
                    q.append(i)
        if len(reached) == n:
            return True
    return False


def all_subgraphs(g: CouplingGraph) -> dict[int, CouplingSubGraph]:
    return {i: subgraph(g, i) for i in g.node_ids}


def build_topology(
    kind: str,
    nodes: Sequence[int],
    edges: Iterable = (),
    default_weight: float = 1.0,
) -> CouplingGraph:
    """Construct a named topology: ``full``, ``ring`` or ``custom``.

    ``custom`` takes the explicit edge list; omitted weights default to
    ``default_weight``.
    """
    nodes = sorted(int(n) for n in nodes)
    if kind == "full":
        es = [
            (a, b, default_weight)
            for idx, a in enumerate(nodes)
            for b in nodes[idx + 1 :]
        ]
    elif kind == "ring":
        if len(nodes) == 1:
            es = []
        elif len(nodes) == 2:
            es = [(nodes[0], nodes[1], default_weight)]
        else:
            es = [
                (nodes[k], nodes[(k + 1) % len(nodes)], default_weight)
                for k in range(len(nodes))
            ]
    elif kind == "custom":
        es = [tuple(e) if len(e) == 3 else (e[0], e[1], default_weight) for e in edges]
    else:
        raise GraphError(f"unknown topology kind {kind!r}")
    return CouplingGraph(nodes, es)
