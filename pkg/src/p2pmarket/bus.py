"""Synchronous message bus with a boundary audit.

Agents never touch each other's state. Each round every agent reads its
inbox, computes its update and hands an outbox to the bus; the bus delivers
all outboxes at once at the barrier and records which payload fields crossed
agent boundaries.
"""
from __future__ import annotations

import dataclasses
from collections.abc import Iterable, Mapping
from concurrent.futures import Executor
from typing import Any

from .errors import AuditError, ProtocolError
from .market import Edge
from .rci import PAYLOAD_FIELDS, ROUTING_FIELDS, LocalState, Participant, TradeMessage, TuningSchedule, agent_round


def payload_fields(msg: Any) -> frozenset[str]:
    """Names of every non-routing field carried by ``msg``."""
    if type(msg) is TradeMessage:
        return PAYLOAD_FIELDS
    if isinstance(msg, Mapping):
        names = set(msg)
    elif hasattr(msg, "_fields"):
        names = set(msg._fields)
    elif dataclasses.is_dataclass(msg):
        names = {f.name for f in dataclasses.fields(msg)}
    else:
        names = set()
    names.update(getattr(msg, "__dict__", {}))
    return frozenset(names - ROUTING_FIELDS)


def _route(msg: Any) -> Edge:
    if isinstance(msg, Mapping):
        return msg["sender"], msg["receiver"]
    return msg.sender, msg.receiver


class MessageBus:
    """Per-edge mailboxes, delivered at a global barrier.

    Args:
        edges: directed edges (sender, receiver) that carry exactly one message per round.
        strict: raise :class:`AuditError` at delivery as soon as a payload carries
            anything other than ``{P, lam}``. When False the violation is only
            recorded and surfaces through :meth:`audit`.
        record_payloads: keep every delivered payload in :attr:`log`.
    """

    def __init__(self, edges: Iterable[Edge], strict: bool = True, record_payloads: bool = False):
        self.edges = frozenset(edges)
        self.strict = strict
        self.record_payloads = record_payloads
        self.rounds = 0
        self.messages_delivered = 0
        self.fields_seen: set[str] = set()
        self.violations: list[str] = []
        self.log: list[tuple[int, str, str, dict[str, Any]]] = []
        self._pending: list[Any] = []
        self._boxes: dict[str, dict[str, Any]] = {}

    def post(self, messages: Iterable[Any]) -> None:
        self._pending.extend(messages)

    def deliver(self) -> None:
        """Barrier: validate and deliver every pending message."""
        pending, self._pending = self._pending, []
        boxes: dict[str, dict[str, Any]] = {}
        routes = set()
        for msg in pending:
            sender, receiver = _route(msg)
            if (sender, receiver) not in self.edges:
                raise ProtocolError(f"message on unknown edge {sender}->{receiver}")
            if (sender, receiver) in routes:
                raise ProtocolError(f"duplicate message on edge {sender}->{receiver} in round {self.rounds}")
            routes.add((sender, receiver))
            fields = payload_fields(msg)
            self.fields_seen |= fields
            if fields != PAYLOAD_FIELDS:
                problem = f"round {self.rounds}: {sender}->{receiver} carried fields {sorted(fields)}"
                self.violations.append(problem)
                if self.strict:
                    raise AuditError(problem)
            if self.record_payloads:
                self.log.append((self.rounds, sender, receiver, {f: _get(msg, f) for f in sorted(fields)}))
            boxes.setdefault(receiver, {})[sender] = msg
        if len(routes) != len(self.edges):
            missing = sorted(self.edges - routes)[:3]
            raise ProtocolError(f"round {self.rounds}: no message on edges {missing}")
        self._boxes = boxes
        self.messages_delivered += len(pending)
        self.rounds += 1

    def inbox(self, receiver: str) -> Mapping[str, Any]:
        return self._boxes.get(receiver, {})

    def audit(self) -> None:
        """Raise :class:`AuditError` unless only ``{P, lam}`` ever crossed a boundary."""
        if self.violations:
            raise AuditError(self.violations[0])
        if self.messages_delivered and self.fields_seen != PAYLOAD_FIELDS:
            raise AuditError(f"payload fields seen: {sorted(self.fields_seen)}")


def _get(msg: Any, name: str) -> Any:
    return msg[name] if isinstance(msg, Mapping) else getattr(msg, name)


def seed_bus(bus: MessageBus, states: Mapping[str, LocalState]) -> None:
    """Initial exchange so that round 1 has one message per edge."""
    for n, state in states.items():
        bus.post(state.outbox(n))
    bus.deliver()


def run_round(
    bus: MessageBus,
    agents: Mapping[str, Participant],
    states: Mapping[str, LocalState],
    k: int,
    tuning: TuningSchedule,
    executor: Executor | None = None,
) -> dict[str, LocalState]:
    """Run :func:`agent_round` for every agent, then deliver all outboxes at the barrier."""
    ids = list(agents)

    def step(n: str):
        return agent_round(agents[n], states[n], bus.inbox(n), k, tuning)

    results = list(executor.map(step, ids)) if executor is not None else [step(n) for n in ids]
    new_states = {}
    for n, (state, outbox) in zip(ids, results):
        new_states[n] = state
        bus.post(outbox)
    bus.deliver()
    return new_states
