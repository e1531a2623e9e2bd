"""Deterministic round-based message bus between agent processes.

Messages are only delivered between coupled neighbors, all messages of a
round are delivered before anyone computes again, and delivery order is
sorted by sender id, so a simulation is reproducible regardless of how
the caller iterates. Votes (global AND over per-agent flags) are floods:
after diameter-many rounds every agent holds the conjunction over its
connected component.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import ClassVar, Mapping, Sequence

import numpy as np

from .coupling_graph import CouplingGraph


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Message:
    sender: int
    receiver: int
    round_no: int
    payload: object

    @property
    def kind(self) -> str:
        return getattr(self.payload, "KIND", type(self.payload).__name__)


@dataclass(frozen=True)
class ConsistencyVote:
    KIND: ClassVar[str] = "consistency_vote"
    value: bool


@dataclass(frozen=True)
class FeasibilityVote:
    KIND: ClassVar[str] = "feasibility_vote"
    value: bool


def payload_nbytes(obj) -> int:
    """Rough wire size of a payload: numpy buffers plus 8 bytes per scalar."""
    if isinstance(obj, np.ndarray):
        return obj.nbytes
    if isinstance(obj, dict):
        return sum(8 + payload_nbytes(v) for v in obj.values())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return sum(
            payload_nbytes(getattr(obj, f.name)) for f in dataclasses.fields(obj)
        )
    if isinstance(obj, (bool, int, float)):
        return 8
    if isinstance(obj, (list, tuple)):
        return sum(payload_nbytes(v) for v in obj)
    return 0


def run_round(
    pending: Sequence[Message], topology: CouplingGraph
) -> dict[int, list[Message]]:
    """Deliver one round of messages; every agent gets a (possibly empty)
    inbox sorted by sender id. Sending to a non-neighbor is a protocol
    violation."""
    delivered: dict[int, list[Message]] = {i: [] for i in topology.node_ids}
    for msg in pending:
        if not topology.has_edge(msg.sender, msg.receiver):
            raise ProtocolError(
                f"message from {msg.sender} to non-neighbor {msg.receiver}"
            )
        delivered[msg.receiver].append(msg)
    for inbox in delivered.values():
        inbox.sort(key=lambda m: m.sender)
    return delivered


class RoundBus:
    """Owns the round barrier and (optionally) a message trace.

    Trace rows are (round, sender, receiver, kind, payload_bytes).
    """

    def __init__(self, topology: CouplingGraph, record_trace: bool = False):
        self.topology = topology
        self.round_no = 0
        self.message_count = 0
        self.trace: list[tuple] | None = [] if record_trace else None

    def exchange(
        self, outgoing: Mapping[int, Mapping[int, object]]
    ) -> dict[int, list[Message]]:
        msgs = [
            Message(s, r, self.round_no, outgoing[s][r])
            for s in sorted(outgoing)
            for r in sorted(outgoing[s])
        ]
        delivered = run_round(msgs, self.topology)
        if self.trace is not None:
            for m in msgs:
                self.trace.append(
                    (m.round_no, m.sender, m.receiver, m.kind, payload_nbytes(m.payload))
                )
        self.round_no += 1
        self.message_count += len(msgs)
        return delivered

    def broadcast(self, payloads: Mapping[int, object]) -> dict[int, list[Message]]:
        """Each sender posts the same payload to all of its neighbors."""
        outgoing = {
            i: {m: payloads[i] for m in self.topology.neighbors(i)}
            for i in sorted(payloads)
        }
        return self.exchange(outgoing)


def flood_and(
    flags: Mapping[int, bool], bus: RoundBus, vote_cls=ConsistencyVote
) -> dict[int, bool]:
    """Conjunction of boolean flags over each connected component via
    diameter-many neighbor flooding rounds."""
    out = dict(flags)
    for _ in range(bus.topology.diameter()):
        delivered = bus.broadcast({i: vote_cls(out[i]) for i in sorted(out)})
        out = {
            i: out[i]
            and all(m.payload.value for m in delivered[i] if m.sender in out)
            for i in out
        }
    return out
