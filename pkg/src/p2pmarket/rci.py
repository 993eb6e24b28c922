"""Per-agent Relaxed Consensus+Innovation updates.

Everything in this module is local to one agent: it sees its own
:class:`~p2pmarket.market.AgentSpec`, its own trading coefficients and the
``(P, lambda)`` pairs its neighbors sent in the previous round. The
orchestration across agents lives in :mod:`p2pmarket.bus` and
:mod:`p2pmarket.negotiation`.
"""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ConfigurationError, ContractViolation, ProtocolError
from .market import AgentSpec, MarketInstance


@dataclass(frozen=True)
class TuningSchedule:
    """Step-size sequences c0 / k**e for alpha, beta, eta and delta."""

    alpha0: float = 0.01
    alpha_exp: float = 0.01
    beta0: float = 0.1
    beta_exp: float = 0.1
    eta0: float = 0.005
    eta_exp: float = 0.0
    delta0: float = 1.0
    delta_exp: float = 0.0

    def __post_init__(self):
        for name in ("alpha0", "beta0", "eta0", "delta0"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        for name in ("alpha_exp", "beta_exp", "eta_exp", "delta_exp"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")

    def at(self, k: int) -> tuple[float, float, float, float]:
        """(alpha, beta, eta, delta) for iteration ``k >= 1``."""
        if k < 1:
            raise ContractViolation(f"schedules are defined for k >= 1, got {k}")
        return (
            self.alpha0 / k**self.alpha_exp,
            self.beta0 / k**self.beta_exp,
            self.eta0 / k**self.eta_exp,
            self.delta0 / k**self.delta_exp,
        )

    @classmethod
    def parse(cls, text: str) -> TuningSchedule:
        """Parse ``a0,ae,b0,be,eta,delta`` (eta and delta constant)."""
        parts = [float(x) for x in text.split(",")]
        if len(parts) != 6:
            raise ConfigurationError(f"expected 6 comma-separated tuning values, got {len(parts)}")
        a0, ae, b0, be, eta, delta = parts
        return cls(a0, ae, b0, be, eta, 0.0, delta, 0.0)


@dataclass(frozen=True)
class StoppingCriteria:
    eps_lambda: float = 0.001
    eps_P: float = 0.01
    eps_mu: float = 0.0001
    max_iterations: int = 50_000
    check_mu: bool = True

    def __post_init__(self):
        if not (self.eps_lambda > 0 and self.eps_P > 0 and self.eps_mu > 0):
            raise ConfigurationError("stopping tolerances must be > 0")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")

    @classmethod
    def parse(cls, text: str, **kwargs) -> StoppingCriteria:
        parts = [float(x) for x in text.split(",")]
        if len(parts) != 3:
            raise ConfigurationError(f"expected eps_lambda,eps_P,eps_mu, got {text!r}")
        return cls(*parts, **kwargs)


class TradeMessage(NamedTuple):
    """The only data an agent sends to a neighbor: its trade and price estimate."""

    sender: str
    receiver: str
    P: float
    lam: float


ROUTING_FIELDS = frozenset({"sender", "receiver"})
PAYLOAD_FIELDS = frozenset({"P", "lam"})


@dataclass(frozen=True)
class LocalState:
    """Private iterates of one agent, aligned with ``neighbors``."""

    neighbors: tuple[str, ...]
    p: tuple[float, ...]
    lam: tuple[float, ...]
    mu_up: float = 0.0
    mu_down: float = 0.0
    k: int = 0

    @classmethod
    def cold(cls, neighbors: Sequence[str]) -> LocalState:
        zeros = (0.0,) * len(neighbors)
        return cls(tuple(neighbors), zeros, zeros)

    @property
    def net(self) -> float:
        return sum(self.p)

    def restarted(self) -> LocalState:
        """Same iterates with the iteration counter reset (warm start)."""
        return LocalState(self.neighbors, self.p, self.lam, self.mu_up, self.mu_down, 0)

    def outbox(self, sender: str) -> list[TradeMessage]:
        return [TradeMessage(sender, m, p, lam) for m, p, lam in zip(self.neighbors, self.p, self.lam)]


@dataclass(frozen=True)
class Participant:
    """An agent's private knowledge: its spec and its own trading coefficients."""

    spec: AgentSpec
    neighbors: tuple[str, ...]
    coefficients: tuple[float, ...]

    @property
    def id(self) -> str:
        return self.spec.id


def participants(instance: MarketInstance) -> dict[str, Participant]:
    coeffs = instance.coefficients
    out = {}
    for agent in instance.agents:
        nbrs = instance.neighbors(agent.id)
        if not nbrs:
            raise ConfigurationError(f"agent {agent.id} has no trading partners")
        out[agent.id] = Participant(agent, nbrs, tuple(coeffs[(agent.id, m)] for m in nbrs))
    return out


def lambda_update(lam_nm: float, lam_mn: float, p_nm: float, p_mn: float, alpha: float, beta: float) -> float:
    """Consensus on the price estimate plus innovation on the trade imbalance."""
    return lam_nm - beta * (lam_nm - lam_mn) - alpha * (p_nm + p_mn)


def mu_update(
    mu_up: float, mu_down: float, p_n: float, p_min: float, p_max: float, eta: float
) -> tuple[float, float]:
    return max(0.0, mu_up + eta * (p_n - p_max)), max(0.0, mu_down + eta * (p_min - p_n))


def target_setpoint(agent: AgentSpec, lam_hat: float, mu_up: float, mu_down: float) -> float:
    """Net injection at which the agent's marginal cost equals the perceived price."""
    if agent.a <= 0:
        raise ContractViolation(f"agent {agent.id}: cost gradient is not invertible (a={agent.a})")
    return (lam_hat - mu_up + mu_down - agent.b) / agent.a


def distribution_factors(p_n: Sequence[float], delta: float) -> tuple[float, ...]:
    if not p_n:
        raise ConfigurationError("distribution factors need at least one neighbor")
    weights = [abs(x) + delta for x in p_n]
    total = sum(weights)
    return tuple(w / total for w in weights)


def p_update(is_producer: bool, p_nm: float, f_nm: float, target: float, p_n: float) -> float:
    value = p_nm + f_nm * (target - p_n)
    return max(0.0, value) if is_producer else min(0.0, value)


def agent_round(
    participant: Participant,
    state: LocalState,
    inbox: Mapping[str, TradeMessage],
    k: int,
    tuning: TuningSchedule,
) -> tuple[LocalState, list[TradeMessage]]:
    """One RCI iteration for one agent: lambda-, mu- then P-update, then messages out.

    ``inbox`` maps each neighbor id to the message it sent at the end of the
    previous round. The new state carries iteration index ``k``.
    """
    spec = participant.spec
    alpha, beta, eta, delta = tuning.at(k)
    nbrs = state.neighbors
    try:
        msgs = [inbox[m] for m in nbrs]
    except KeyError as exc:
        raise ProtocolError(f"agent {spec.id}: no message from neighbor {exc.args[0]} in round {k}") from None

    p, lam = state.p, state.lam
    lam_new = tuple(
        lambda_update(l_nm, msg.lam, p_nm, msg.P, alpha, beta) for l_nm, p_nm, msg in zip(lam, p, msgs)
    )
    p_n = sum(p)
    mu_up, mu_down = mu_update(state.mu_up, state.mu_down, p_n, spec.p_min, spec.p_max, eta)
    factors = distribution_factors(p, delta)
    producer = spec.is_producer
    p_new = tuple(
        p_update(producer, p_nm, f_nm, target_setpoint(spec, l_nm - c_nm, mu_up, mu_down), p_n)
        for p_nm, f_nm, l_nm, c_nm in zip(p, factors, lam_new, participant.coefficients)
    )
    new_state = LocalState(nbrs, p_new, lam_new, mu_up, mu_down, k)
    return new_state, new_state.outbox(spec.id)


def averaged_perceived_price(participant: Participant, state: LocalState, delta: float = 1.0) -> float:
    """Perceived prices averaged with the distribution factors of the current trades."""
    factors = distribution_factors(state.p, delta)
    return sum(f * (l - c) for f, l, c in zip(factors, state.lam, participant.coefficients))


def state_deltas(prev: Mapping[str, LocalState], nxt: Mapping[str, LocalState]) -> tuple[float, float, float]:
    """Largest change in lambda, P and mu between two aligned snapshots."""
    d_lam = d_p = d_mu = 0.0
    for n, a in prev.items():
        b = nxt[n]
        for x, y in zip(a.lam, b.lam):
            d = abs(x - y)
            if d > d_lam:
                d_lam = d
        for x, y in zip(a.p, b.p):
            d = abs(x - y)
            if d > d_p:
                d_p = d
        d_mu = max(d_mu, abs(a.mu_up - b.mu_up), abs(a.mu_down - b.mu_down))
    return d_lam, d_p, d_mu


def check_convergence(
    prev: Mapping[str, LocalState], nxt: Mapping[str, LocalState], criteria: StoppingCriteria
) -> bool:
    d_lam, d_p, d_mu = state_deltas(prev, nxt)
    if d_lam >= criteria.eps_lambda or d_p >= criteria.eps_P:
        return False
    return not criteria.check_mu or d_mu < criteria.eps_mu
