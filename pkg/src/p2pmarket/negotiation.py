"""Negotiation orchestrator: drives synchronous RCI rounds until convergence."""
from __future__ import annotations

import logging
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field

from .bus import MessageBus, run_round, seed_bus
from .market import Edge, MarketInstance, TradeMatrix, agent_cost, total_cost
from .rci import (
    LocalState,
    StoppingCriteria,
    TuningSchedule,
    averaged_perceived_price,
    check_convergence,
    participants,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    consensus_err: float
    reciprocity_err: float
    objective: float


@dataclass
class ClearingResult:
    """Outcome of one negotiation.

    ``trades`` holds each agent's own iterate P_nm, so reciprocity holds only up
    to the stopping tolerance; :attr:`balanced_trades` is the symmetrized point
    used for costs and gaps. ``converged`` is False when the iteration cap was
    hit, in which case the fields describe the last iterate.
    """

    instance: MarketInstance
    trades: TradeMatrix
    prices: dict[Edge, float]
    perceived_prices: dict[Edge, float]
    mu_up: dict[str, float]
    mu_down: dict[str, float]
    iterations: int
    converged: bool
    objective: float
    states: dict[str, LocalState]
    averaged_perceived: dict[str, float]
    trace: list[TraceRecord] = field(default_factory=list)

    @property
    def balanced_trades(self) -> TradeMatrix:
        return self.trades.symmetrized()

    @property
    def net_injections(self) -> dict[str, float]:
        return {a.id: self.trades.net(a.id) for a in self.instance.agents}

    def consensus_error(self) -> float:
        return max((abs(v - self.prices[(m, n)]) for (n, m), v in self.prices.items()), default=0.0)

    def reciprocity_error(self) -> float:
        t = self.trades.trades
        return max((abs(v + t[(m, n)]) for (n, m), v in t.items()), default=0.0)

    def perceived_price_spread(self, min_trade: float) -> dict[str, float]:
        """Per agent, max - min perceived price over trades with |P_nm| > ``min_trade``."""
        out = {}
        for agent in self.instance.agents:
            vals = [
                self.perceived_prices[(agent.id, m)]
                for m in self.instance.neighbors(agent.id)
                if abs(self.trades[(agent.id, m)]) > min_trade
            ]
            out[agent.id] = max(vals) - min(vals) if vals else 0.0
        return out


def _iterate_metrics(instance: MarketInstance, states: Mapping[str, LocalState]) -> tuple[float, float, float]:
    p: dict[Edge, float] = {}
    lam: dict[Edge, float] = {}
    objective = 0.0
    coeffs = instance.coefficients
    for n, st in states.items():
        for m, p_nm, l_nm in zip(st.neighbors, st.p, st.lam):
            p[(n, m)] = p_nm
            lam[(n, m)] = l_nm
            objective += coeffs[(n, m)] * p_nm
        objective += agent_cost(instance.by_id[n], sum(st.p))
    consensus = max((abs(v - lam[(m, n)]) for (n, m), v in lam.items()), default=0.0)
    reciprocity = max((abs(v + p[(m, n)]) for (n, m), v in p.items()), default=0.0)
    return consensus, reciprocity, objective


def initial_states(instance: MarketInstance, init: Mapping[str, LocalState] | None = None) -> dict[str, LocalState]:
    """Cold start (all zeros) or a warm start from ``init`` where neighborhoods match."""
    states = {}
    for agent in instance.agents:
        nbrs = instance.neighbors(agent.id)
        prev = init.get(agent.id) if init else None
        if prev is not None and prev.neighbors == nbrs:
            states[agent.id] = prev.restarted()
        else:
            states[agent.id] = LocalState.cold(nbrs)
    return states


def run_negotiation(
    instance: MarketInstance,
    init: Mapping[str, LocalState] | None = None,
    tuning: TuningSchedule | None = None,
    criteria: StoppingCriteria | None = None,
    bus: MessageBus | None = None,
    record_trace: bool = True,
    workers: int | None = None,
) -> ClearingResult:
    """Clear ``instance`` with decentralized RCI rounds over a message bus.

    Args:
        init: warm-start states keyed by agent id; missing agents start cold.
        bus: a pre-built bus (e.g. with payload recording for audits).
        record_trace: keep per-iteration consensus/reciprocity/objective records.
        workers: run agent updates of a round on a thread pool of this size.
            Results are identical to serial execution.
    """
    tuning = tuning or TuningSchedule()
    criteria = criteria or StoppingCriteria()
    agents = participants(instance)
    states = initial_states(instance, init)
    if bus is None:
        bus = MessageBus(instance.graph.directed_edges())
    seed_bus(bus, states)

    trace: list[TraceRecord] = []
    converged = False
    k = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers and workers > 1 else nullcontext()
    with pool as executor:
        for k in range(1, criteria.max_iterations + 1):
            new_states = run_round(bus, agents, states, k, tuning, executor)
            if record_trace:
                trace.append(TraceRecord(k, *_iterate_metrics(instance, new_states)))
            converged = check_convergence(states, new_states, criteria)
            states = new_states
            if converged:
                break
    if not converged:
        log.warning("RCI did not converge within %d iterations", criteria.max_iterations)

    trades, prices, perceived = {}, {}, {}
    for n, st in states.items():
        for m, p_nm, l_nm, c_nm in zip(st.neighbors, st.p, st.lam, agents[n].coefficients):
            trades[(n, m)] = p_nm
            prices[(n, m)] = l_nm
            perceived[(n, m)] = l_nm - c_nm
    _, delta = tuning.at(max(k, 1))[2:]
    matrix = TradeMatrix(trades)
    return ClearingResult(
        instance=instance,
        trades=matrix,
        prices=prices,
        perceived_prices=perceived,
        mu_up={n: st.mu_up for n, st in states.items()},
        mu_down={n: st.mu_down for n, st in states.items()},
        iterations=k,
        converged=converged,
        objective=total_cost(instance, matrix.symmetrized()),
        states=states,
        averaged_perceived={n: averaged_perceived_price(agents[n], st, delta) for n, st in states.items()},
        trace=trace,
    )
