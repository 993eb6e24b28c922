import math

import pytest

from p2pmarket.errors import ConfigurationError, ContractViolation, ValidationError
from p2pmarket.market import (
    AgentSpec,
    MarketInstance,
    Role,
    TradeCharacteristics,
    TradeGraph,
    TradeMatrix,
    agent_cost,
    check_feasibility,
    direct_cost,
    distance_characteristics,
    kkt_residual,
    marginal_cost,
    perceived_price,
    total_cost,
    trading_coefficient,
    trading_cost,
)

from builders import P, C, two_agent


def chars(values):
    return TradeCharacteristics({crit: {("n", "m"): v} for crit, v in values.items()})


def agent(role=P, **kw):
    base = dict(a=0.1, b=2.0, p_min=0.0, p_max=20.0) if role is P else dict(a=0.1, b=4.0, p_min=-20.0, p_max=0.0)
    base.update(kw)
    return AgentSpec(kw.pop("id", "n"), role, **{k: v for k, v in base.items() if k != "id"})


class TestAgentSpec:
    def test_valid(self):
        a = agent()
        assert a.is_producer and not a.must_take

    @pytest.mark.parametrize(
        "kw",
        [dict(a=0.0), dict(a=-1.0), dict(b=-0.1), dict(d=-1.0), dict(p_min=5.0, p_max=1.0), dict(a=math.nan)],
    )
    def test_invariants(self, kw):
        with pytest.raises(ValidationError):
            agent(**kw)

    def test_role_sign_rules(self):
        with pytest.raises(ValidationError, match="producer p_min"):
            agent(P, p_min=-1.0)
        with pytest.raises(ValidationError, match="consumer p_max"):
            agent(C, p_max=1.0)

    def test_must_take(self):
        assert agent(p_min=7.0, p_max=7.0).must_take


class TestTradeGraph:
    def test_asymmetric_rejected(self):
        with pytest.raises(ConfigurationError, match="symmetric"):
            TradeGraph({"a": ("b",), "b": ()})

    def test_self_edge_rejected(self):
        with pytest.raises(ConfigurationError, match="self-edge"):
            TradeGraph({"a": ("a",)})

    def test_unknown_neighbor_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown"):
            TradeGraph({"a": ("z",)})

    def test_producer_consumer_builder(self):
        agents = [agent(P, id="p1"), agent(P, id="p2"), agent(C, id="c1")]
        g = TradeGraph.producer_consumer(agents)
        assert g.neighbors == {"p1": ("c1",), "p2": ("c1",), "c1": ("p1", "p2")}
        assert len(g.directed_edges()) == 4
        assert len(g.undirected_edges()) == 2

    def test_complete_builder(self):
        agents = [agent(P, id="p1"), agent(P, id="p2"), agent(C, id="c1")]
        assert len(TradeGraph.complete(agents).undirected_edges()) == 3


class TestTradingCoefficient:
    def test_single_term(self):
        a = agent(criterion_values={"dist": 1.0})
        assert trading_coefficient(a, ("n", "m"), chars({"dist": 2.0})) == 2.0

    def test_empty(self):
        assert trading_coefficient(agent(), ("n", "m"), chars({})) == 0.0

    def test_two_terms(self):
        a = agent(criterion_values={"dist": 1.0, "co2": 0.5})
        assert trading_coefficient(a, ("n", "m"), chars({"dist": 2.0, "co2": 4.0})) == 4.0

    def test_missing_characteristic(self):
        a = agent(criterion_values={"co2": 1.0})
        with pytest.raises(ConfigurationError, match="co2"):
            trading_coefficient(a, ("n", "m"), chars({"dist": 1.0}))

    def test_instance_requires_characteristics(self):
        agents = [agent(P, id="p", criterion_values={"co2": 1.0}), agent(C, id="c")]
        with pytest.raises(ConfigurationError):
            MarketInstance(agents, TradeGraph.producer_consumer(agents), TradeCharacteristics({}))

    def test_negative_characteristic_rejected(self):
        with pytest.raises(ValidationError):
            TradeCharacteristics({"dist": {("a", "b"): -1.0}})


class TestCosts:
    def test_case_agent_3(self):
        a = AgentSpec("3", P, 0.056, 3.0, 15.0, 105.0)
        assert agent_cost(a, 50.0) == pytest.approx(220.0, abs=1e-12)

    def test_zero_gives_d(self):
        assert agent_cost(agent(d=4.5), 0.0) == 4.5

    def test_consumer_sign(self):
        a = AgentSpec("c", C, 0.1, 2.0, -20.0, 0.0)
        assert agent_cost(a, -10.0) == pytest.approx(-15.0, abs=1e-12)

    def test_marginal(self):
        assert marginal_cost(agent(), 10.0) == pytest.approx(3.0)

    def test_trading_cost_dot_product(self):
        a = AgentSpec("n", P, 0.1, 2.0, 0.0, 20.0, criterion_values={"dist": 1.0})
        ch = TradeCharacteristics({"dist": {("n", "x"): 1.0, ("n", "y"): 2.0}})
        assert trading_cost(a, {"x": 3.0, "y": 1.0}, ch) == 5.0
        assert trading_cost(a, {"x": 0.0, "y": 0.0}, ch) == 0.0

    def test_trading_cost_consumer_sign(self):
        a = AgentSpec("n", C, 0.1, 4.0, -20.0, 0.0, criterion_values={"dist": -1.0})
        ch = TradeCharacteristics({"dist": {("n", "m"): 2.0}})
        assert trading_cost(a, {"m": -4.0}, ch) == 8.0

    def test_total_cost_zero_trades(self):
        inst = two_agent()
        inst = inst.with_agents([a.with_bounds(a.p_min, a.p_max) for a in inst.agents])
        agents = [AgentSpec(a.id, a.role, a.a, a.b, a.p_min, a.p_max, d=1.5) for a in inst.agents]
        inst = MarketInstance(tuple(agents), inst.graph, inst.characteristics)
        assert total_cost(inst, TradeMatrix.zeros(inst.graph)) == 3.0

    def test_total_cost_two_agent_independent_sum(self):
        inst = two_agent(c=1.0)
        trades = TradeMatrix({("p", "c"): 10.0, ("c", "p"): -10.0})
        gamma = 0.001  # producer and consumer sit 1 m apart
        expected = (0.5 * 0.1 * 100 + 2 * 10) + (0.5 * 0.1 * 100 - 4 * 10) + (1.0 * gamma * 10) + (-1.0 * gamma * -10)
        assert total_cost(inst, trades) == pytest.approx(expected, rel=1e-12)
        assert direct_cost(inst, trades) == pytest.approx(-10.0, rel=1e-12)

    def test_perceived_price(self):
        assert perceived_price(5, 2) == 3
        assert perceived_price(5, 0) == 5
        assert perceived_price(5, -1) == 6


class TestFeasibility:
    def test_feasible_point(self):
        inst = two_agent()
        report = check_feasibility(inst, TradeMatrix({("p", "c"): 10.0, ("c", "p"): -10.0}))
        assert report.feasible
        assert not report  # empty report, like an empty list

    def test_reciprocity_violation(self):
        inst = two_agent()
        report = check_feasibility(inst, TradeMatrix({("p", "c"): 1.0, ("c", "p"): 0.0}))
        assert not report.feasible
        (v,) = report.by_kind("reciprocity")
        assert v.amount == pytest.approx(1.0)

    def test_sign_violation(self):
        inst = two_agent()
        report = check_feasibility(inst, TradeMatrix({("p", "c"): -0.5, ("c", "p"): 0.5}))
        assert report.by_kind("sign")

    def test_bound_violation(self):
        inst = two_agent()
        report = check_feasibility(inst, TradeMatrix({("p", "c"): 25.0, ("c", "p"): -25.0}))
        assert {v.where for v in report.by_kind("bound")} == {"p", "c"}
        assert report.max_violation == pytest.approx(5.0)

    def test_domain_violation(self):
        inst = two_agent()
        assert check_feasibility(inst, TradeMatrix({("p", "c"): 0.0})).by_kind("domain")


class TestKKT:
    def test_two_agent_optimum(self):
        inst = two_agent()
        trades = TradeMatrix({("p", "c"): 10.0, ("c", "p"): -10.0})
        prices = {("p", "c"): 3.0, ("c", "p"): 3.0}
        zero = {"p": 0.0, "c": 0.0}
        assert kkt_residual(inst, trades, prices, zero, zero) == pytest.approx(0.0, abs=1e-12)

    def test_price_perturbation(self):
        inst = two_agent()
        trades = TradeMatrix({("p", "c"): 10.0, ("c", "p"): -10.0})
        prices = {("p", "c"): 3.5, ("c", "p"): 3.5}
        zero = {"p": 0.0, "c": 0.0}
        assert kkt_residual(inst, trades, prices, zero, zero) == pytest.approx(0.5, abs=1e-12)

    def test_negative_multiplier(self):
        inst = two_agent()
        with pytest.raises(ContractViolation):
            kkt_residual(inst, TradeMatrix.zeros(inst.graph), {}, {"p": -1.0, "c": 0.0}, {"p": 0.0, "c": 0.0})


class TestDistance:
    def test_same_bus_euclidean(self):
        x = agent(P, id="x", position=(0, 0))
        y = agent(C, id="y", position=(3, 4))
        ch = distance_characteristics([x, y])
        assert ch.get("distance", ("x", "y")) == 5.0
        assert ch.get("distance", ("y", "x")) == 5.0

    def test_inter_bus_fixed(self):
        x = agent(P, id="x", position=(0, 0), bus="1")
        y = agent(C, id="y", position=(30, 40), bus="2")
        assert distance_characteristics([x, y], inter_bus_gamma=1.0).get("distance", ("x", "y")) == 1.0

    def test_colocated(self):
        x = agent(P, id="x", position=(1, 1))
        y = agent(C, id="y", position=(1, 1))
        assert distance_characteristics([x, y]).get("distance", ("x", "y")) == 0.0


def test_common_criterion_signs():
    inst = two_agent().with_common_criterion(2.0)
    assert inst.agent("p").criterion_values == {"distance": 2.0}
    assert inst.agent("c").criterion_values == {"distance": -2.0}
    assert Role(inst.agent("c").role) is Role.CONSUMER
