"""Market data model, cost functions and verification predicates.

Units follow the bundled case study: energy in kWh per time step, money in
euro cents (c€). Positive trades are sales, negative trades are purchases.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property

from .errors import ConfigurationError, ContractViolation, ValidationError

Edge = tuple[str, str]

DISTANCE = "distance"


class Role(str, enum.Enum):
    PRODUCER = "producer"
    CONSUMER = "consumer"


@dataclass(frozen=True)
class AgentSpec:
    """Static description of one market participant.

    ``criterion_values`` maps a criterion id to the agent's unit valuation of
    that criterion (c€/kWh per characteristic unit). By convention producers
    carry positive values and consumers negative ones.
    """

    id: str
    role: Role
    a: float
    b: float
    p_min: float
    p_max: float
    d: float = 0.0
    position: tuple[float, float] = (0.0, 0.0)
    bus: str = "1"
    criterion_values: Mapping[str, float] = field(default_factory=dict)
    kind: str = ""

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))
        object.__setattr__(self, "criterion_values", dict(self.criterion_values))
        for name in ("a", "b", "d", "p_min", "p_max"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValidationError(f"agent {self.id}: {name} must be finite, got {value}")
        if self.a <= 0:
            raise ValidationError(f"agent {self.id}: quadratic coefficient a must be > 0, got {self.a}")
        if self.b < 0:
            raise ValidationError(f"agent {self.id}: linear coefficient b must be >= 0, got {self.b}")
        if self.d < 0:
            raise ValidationError(f"agent {self.id}: constant d must be >= 0, got {self.d}")
        if self.p_min > self.p_max:
            raise ValidationError(f"agent {self.id}: p_min {self.p_min} > p_max {self.p_max}")
        if self.role is Role.PRODUCER and self.p_min < 0:
            raise ValidationError(f"agent {self.id}: producer p_min must be >= 0, got {self.p_min}")
        if self.role is Role.CONSUMER and self.p_max > 0:
            raise ValidationError(f"agent {self.id}: consumer p_max must be <= 0, got {self.p_max}")

    @property
    def is_producer(self) -> bool:
        return self.role is Role.PRODUCER

    @property
    def must_take(self) -> bool:
        return self.p_min == self.p_max

    def with_bounds(self, p_min: float, p_max: float) -> AgentSpec:
        return dataclasses.replace(self, p_min=float(p_min), p_max=float(p_max))

    def with_criterion_values(self, values: Mapping[str, float]) -> AgentSpec:
        return dataclasses.replace(self, criterion_values=dict(values))


@dataclass(frozen=True)
class TradeGraph:
    """Symmetric communication graph: ``neighbors[n]`` is the ordered set omega_n."""

    neighbors: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        nb = {n: tuple(ms) for n, ms in self.neighbors.items()}
        object.__setattr__(self, "neighbors", nb)
        for n, ms in nb.items():
            if len(set(ms)) != len(ms):
                raise ConfigurationError(f"duplicate neighbor in omega_{n}")
            for m in ms:
                if m == n:
                    raise ConfigurationError(f"self-edge on agent {n}")
                if m not in nb:
                    raise ConfigurationError(f"agent {n} lists unknown neighbor {m}")
                if n not in nb[m]:
                    raise ConfigurationError(f"graph not symmetric: {n}->{m} without {m}->{n}")

    @classmethod
    def from_edges(cls, agent_ids: Iterable[str], edges: Iterable[tuple[str, str]]) -> TradeGraph:
        ids = list(agent_ids)
        nb: dict[str, list[str]] = {n: [] for n in ids}
        for n, m in edges:
            if n not in nb or m not in nb:
                raise ConfigurationError(f"edge ({n}, {m}) references an unknown agent")
            if m not in nb[n]:
                nb[n].append(m)
            if n not in nb[m]:
                nb[m].append(n)
        order = {n: i for i, n in enumerate(ids)}
        return cls({n: tuple(sorted(ms, key=order.__getitem__)) for n, ms in nb.items()})

    @classmethod
    def producer_consumer(cls, agents: Iterable[AgentSpec]) -> TradeGraph:
        """Complete bipartite graph between producers and consumers."""
        agents = list(agents)
        edges = [(p.id, c.id) for p in agents if p.is_producer for c in agents if not c.is_producer]
        return cls.from_edges((a.id for a in agents), edges)

    @classmethod
    def complete(cls, agents: Iterable[AgentSpec]) -> TradeGraph:
        agents = list(agents)
        edges = [(x.id, y.id) for i, x in enumerate(agents) for y in agents[i + 1:]]
        return cls.from_edges((a.id for a in agents), edges)

    def directed_edges(self) -> list[Edge]:
        return [(n, m) for n, ms in self.neighbors.items() for m in ms]

    def undirected_edges(self) -> list[Edge]:
        """Each pair once, in the order the first endpoint appears."""
        seen = set()
        out = []
        for n, ms in self.neighbors.items():
            for m in ms:
                if (m, n) not in seen:
                    seen.add((n, m))
                    out.append((n, m))
        return out


@dataclass(frozen=True)
class TradeCharacteristics:
    """Per-criterion trade characteristics gamma[criterion][(n, m)] >= 0."""

    gamma: Mapping[str, Mapping[Edge, float]]

    def __post_init__(self):
        g = {crit: dict(vals) for crit, vals in self.gamma.items()}
        object.__setattr__(self, "gamma", g)
        for crit, vals in g.items():
            for edge, value in vals.items():
                if not (math.isfinite(value) and value >= 0):
                    raise ValidationError(f"characteristic {crit}{edge} must be finite and >= 0, got {value}")

    def get(self, criterion: str, edge: Edge) -> float:
        try:
            return self.gamma[criterion][edge]
        except KeyError:
            raise ConfigurationError(
                f"no characteristic for criterion {criterion!r} on edge {edge[0]}->{edge[1]}"
            ) from None


@dataclass(frozen=True)
class TradeMatrix:
    """Bilateral trades P_nm keyed by directed edge (n, m)."""

    trades: Mapping[Edge, float]

    def __post_init__(self):
        object.__setattr__(self, "trades", {e: float(v) for e, v in self.trades.items()})

    def __getitem__(self, edge: Edge) -> float:
        return self.trades[edge]

    def __len__(self):
        return len(self.trades)

    @cached_property
    def net_injections(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for (n, _), value in self.trades.items():
            out[n] = out.get(n, 0.0) + value
        return out

    def net(self, agent_id: str) -> float:
        return self.net_injections.get(agent_id, 0.0)

    def symmetrized(self) -> TradeMatrix:
        """Balanced point with P_nm = (P_nm - P_mn) / 2 on every pair."""
        return TradeMatrix({(n, m): 0.5 * (v - self.trades.get((m, n), 0.0)) for (n, m), v in self.trades.items()})

    @classmethod
    def zeros(cls, graph: TradeGraph) -> TradeMatrix:
        return cls({e: 0.0 for e in graph.directed_edges()})


@dataclass(frozen=True)
class MarketInstance:
    """One clearing problem: agents, trade graph and trade characteristics."""

    agents: tuple[AgentSpec, ...]
    graph: TradeGraph
    characteristics: TradeCharacteristics = field(default_factory=lambda: TradeCharacteristics({}))

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate agent ids")
        if set(ids) != set(self.graph.neighbors):
            raise ConfigurationError("graph vertices do not match the agent list")
        # every referenced criterion must be characterized on every edge the agent trades on
        for agent in self.agents:
            for m in self.graph.neighbors[agent.id]:
                for crit in agent.criterion_values:
                    self.characteristics.get(crit, (agent.id, m))

    @cached_property
    def by_id(self) -> dict[str, AgentSpec]:
        return {a.id: a for a in self.agents}

    def agent(self, agent_id: str) -> AgentSpec:
        return self.by_id[agent_id]

    def neighbors(self, agent_id: str) -> tuple[str, ...]:
        return self.graph.neighbors[agent_id]

    @cached_property
    def coefficients(self) -> dict[Edge, float]:
        """c_nm for every directed edge."""
        return {
            (n, m): trading_coefficient(self.by_id[n], (n, m), self.characteristics)
            for n, m in self.graph.directed_edges()
        }

    def with_agents(self, agents: Iterable[AgentSpec]) -> MarketInstance:
        return MarketInstance(tuple(agents), self.graph, self.characteristics)

    def with_bounds(self, bounds: Mapping[str, tuple[float, float]]) -> MarketInstance:
        if not bounds:
            return self
        return self.with_agents(
            a.with_bounds(*bounds[a.id]) if a.id in bounds else a for a in self.agents
        )

    def with_common_criterion(self, value: float, criterion: str = DISTANCE) -> MarketInstance:
        """Apply +value to producers and -value to consumers for one criterion."""
        return self.with_agents(
            a.with_criterion_values({criterion: value if a.is_producer else -value}) for a in self.agents
        )


def trading_coefficient(agent: AgentSpec, edge: Edge, chars: TradeCharacteristics) -> float:
    """Bilateral trading coefficient c_nm = sum_g c_n^g * gamma_nm^g."""
    return sum(value * chars.get(crit, edge) for crit, value in agent.criterion_values.items())


def agent_cost(agent: AgentSpec, p: float) -> float:
    return 0.5 * agent.a * p * p + agent.b * p + agent.d


def marginal_cost(agent: AgentSpec, p: float) -> float:
    return agent.a * p + agent.b


def trading_cost(agent: AgentSpec, p_n: Mapping[str, float], chars: TradeCharacteristics) -> float:
    """Linear bilateral trading cost of agent ``n`` over its trade vector ``p_n`` (keyed by neighbor)."""
    return sum(trading_coefficient(agent, (agent.id, m), chars) * p for m, p in p_n.items())


def total_cost(instance: MarketInstance, trades: TradeMatrix) -> float:
    """Social cost: production/consumption costs plus all bilateral trading costs."""
    coeffs = instance.coefficients
    total = 0.0
    for agent in instance.agents:
        p_n = 0.0
        for m in instance.neighbors(agent.id):
            value = trades[(agent.id, m)]
            p_n += value
            total += coeffs[(agent.id, m)] * value
        total += agent_cost(agent, p_n)
    return total


def direct_cost(instance: MarketInstance, trades: TradeMatrix) -> float:
    """Sum of C_n(P_n) only, excluding trading costs."""
    return sum(agent_cost(a, trades.net(a.id)) for a in instance.agents)


def perceived_price(lam: float, c_nm: float) -> float:
    return lam - c_nm


@dataclass(frozen=True)
class Violation:
    kind: str  # "bound", "reciprocity", "sign" or "domain"
    where: str
    amount: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple[Violation, ...] = ()

    @property
    def feasible(self) -> bool:
        return not self.violations

    def __bool__(self):
        return bool(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def by_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]

    @property
    def max_violation(self) -> float:
        return max((v.amount for v in self.violations), default=0.0)


def check_feasibility(instance: MarketInstance, trades: TradeMatrix, tol: float = 1e-9) -> FeasibilityReport:
    """List every bound, reciprocity and sign violation larger than ``tol``."""
    out = []
    edges = instance.graph.directed_edges()
    missing = [e for e in edges if e not in trades.trades]
    for n, m in missing:
        out.append(Violation("domain", f"{n}->{m}", math.inf))
    if missing:
        return FeasibilityReport(tuple(out))
    for agent in instance.agents:
        p_n = sum(trades[(agent.id, m)] for m in instance.neighbors(agent.id))
        if p_n > agent.p_max + tol:
            out.append(Violation("bound", agent.id, p_n - agent.p_max))
        if p_n < agent.p_min - tol:
            out.append(Violation("bound", agent.id, agent.p_min - p_n))
    for n, m in edges:
        value = trades[(n, m)]
        imbalance = abs(value + trades[(m, n)])
        if imbalance > tol and (m, n) > (n, m):
            out.append(Violation("reciprocity", f"{n}<->{m}", imbalance))
        if instance.agent(n).is_producer and value < -tol:
            out.append(Violation("sign", f"{n}->{m}", -value))
        elif not instance.agent(n).is_producer and value > tol:
            out.append(Violation("sign", f"{n}->{m}", value))
    return FeasibilityReport(tuple(out))


def kkt_residual(
    instance: MarketInstance,
    trades: TradeMatrix,
    prices: Mapping[Edge, float],
    mu_up: Mapping[str, float],
    mu_down: Mapping[str, float],
) -> float:
    """Largest first-order optimality residual of a candidate MBED solution.

    Per trade, stationarity and the sign constraint form the complementarity
    pair 0 <= P_nm _|_ g_nm >= 0 for producers (mirrored for consumers), with
    g_nm = a_n P_n + b_n + c_nm - lambda_nm + mu_up - mu_down. Its residual is
    |min(P_nm, g_nm)|: |g_nm| on clearly non-zero trades, the wrong-signed part
    of g_nm on zero trades. Complementary slackness of the bound multipliers
    and price consensus |lambda_nm - lambda_mn| are included. Primal
    feasibility is checked separately by :func:`check_feasibility`.
    """
    for agent in instance.agents:
        if mu_up[agent.id] < 0 or mu_down[agent.id] < 0:
            raise ContractViolation(f"agent {agent.id}: bound multipliers must be >= 0")
    coeffs = instance.coefficients
    worst = 0.0
    for agent in instance.agents:
        n = agent.id
        p_n = sum(trades[(n, m)] for m in instance.neighbors(n))
        up, down = mu_up[n], mu_down[n]
        base = agent.a * p_n + agent.b + up - down
        for m in instance.neighbors(n):
            lam = prices[(n, m)]
            grad = base + coeffs[(n, m)] - lam
            p_nm = trades[(n, m)]
            pair = min(p_nm, grad) if agent.is_producer else max(p_nm, grad)
            worst = max(worst, abs(pair), abs(lam - prices[(m, n)]))
        worst = max(worst, abs(up * (p_n - agent.p_max)), abs(down * (agent.p_min - p_n)))
    return worst


def distance_characteristics(
    agents: Iterable[AgentSpec], inter_bus_gamma: float = 1.0, criterion: str = DISTANCE
) -> TradeCharacteristics:
    """Euclidean distance within a bus, a fixed value between buses."""
    agents = list(agents)
    gamma: dict[Edge, float] = {}
    for x in agents:
        for y in agents:
            if x.id == y.id:
                continue
            if x.bus == y.bus:
                gamma[(x.id, y.id)] = math.dist(x.position, y.position)
            else:
                gamma[(x.id, y.id)] = float(inter_bus_gamma)
    return TradeCharacteristics({criterion: gamma})
