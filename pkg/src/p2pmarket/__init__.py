"""Decentralized peer-to-peer market clearing with product differentiation."""
from .errors import (
    AuditError,
    ConfigurationError,
    ContractViolation,
    InfeasibleError,
    MarketError,
    ProtocolError,
    UnsupportedMetricError,
    ValidationError,
)
from .market import (
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
    total_cost,
)
from .negotiation import ClearingResult, run_negotiation
from .rci import StoppingCriteria, TuningSchedule
from .reference import pool_price_bisection, pool_to_mbed, solve_centralized
from .scenario import load_bundled, load_scenario, save_scenario, synthetic_scenario
from .simulation import Scenario, criterion_sweep, run_timeseries

__all__ = [
    "AgentSpec",
    "AuditError",
    "ClearingResult",
    "ConfigurationError",
    "ContractViolation",
    "InfeasibleError",
    "MarketError",
    "MarketInstance",
    "ProtocolError",
    "Role",
    "Scenario",
    "StoppingCriteria",
    "TradeCharacteristics",
    "TradeGraph",
    "TradeMatrix",
    "TuningSchedule",
    "UnsupportedMetricError",
    "ValidationError",
    "agent_cost",
    "check_feasibility",
    "criterion_sweep",
    "direct_cost",
    "distance_characteristics",
    "kkt_residual",
    "load_bundled",
    "load_scenario",
    "pool_price_bisection",
    "pool_to_mbed",
    "run_negotiation",
    "run_timeseries",
    "save_scenario",
    "solve_centralized",
    "synthetic_scenario",
    "total_cost",
]
