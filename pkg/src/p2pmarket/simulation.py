"""Multi-step simulation, warm starts and case-study metrics."""
from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace

from .errors import UnsupportedMetricError, ValidationError
from .market import DISTANCE, MarketInstance, TradeMatrix, direct_cost
from .negotiation import ClearingResult, TraceRecord, run_negotiation
from .rci import StoppingCriteria, TuningSchedule
from .reference import optimality_gap, solve_centralized

log = logging.getLogger(__name__)

Bounds = tuple[float, float]


@dataclass(frozen=True)
class Scenario:
    """A base market plus per-step bound overrides for time-varying agents.

    Must-take generators are encoded with ``p_min == p_max`` in their overrides.
    ``criterion_value`` records the common +c/-c shorthand the scenario was built
    with (None when agents carry explicit criterion values only).
    """

    base: MarketInstance
    timesteps: tuple[Mapping[str, Bounds], ...] = ()
    step_hours: float = 1.0
    name: str = ""
    criterion_id: str = DISTANCE
    criterion_value: float | None = None
    inter_bus_gamma: float = 1.0
    graph_edges: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        steps = tuple({n: (float(lo), float(hi)) for n, (lo, hi) in step.items()} for step in self.timesteps)
        object.__setattr__(self, "timesteps", steps)
        if self.step_hours <= 0:
            raise ValidationError("step_hours must be > 0")
        for t, step in enumerate(steps):
            for n, (lo, hi) in step.items():
                if n not in self.base.by_id:
                    raise ValidationError(f"step {t}: override for unknown agent {n}")
                try:
                    self.base.agent(n).with_bounds(lo, hi)
                except ValidationError as exc:
                    raise ValidationError(f"step {t}: {exc}") from None

    def __len__(self):
        return len(self.timesteps)

    def instance_at(self, t: int) -> MarketInstance:
        return self.base.with_bounds(self.timesteps[t])

    def with_criterion(self, value: float) -> Scenario:
        """Same scenario with a common criterion value (+value producers, -value consumers)."""
        return replace(self, base=self.base.with_common_criterion(value, self.criterion_id), criterion_value=value)

    def with_timesteps(self, timesteps: Iterable[Mapping[str, Bounds]]) -> Scenario:
        return replace(self, timesteps=tuple(timesteps))

    @property
    def buses(self) -> list[str]:
        return sorted({a.bus for a in self.base.agents})


@dataclass(frozen=True)
class StepSummary:
    step: int
    iterations: int
    converged: bool
    objective: float
    direct_cost: float
    trades: TradeMatrix
    central_objective: float | None = None
    gap: float | None = None
    trace: tuple[TraceRecord, ...] = ()


@dataclass
class SimulationReport:
    steps: list[StepSummary] = field(default_factory=list)
    step_hours: float = 1.0

    def __len__(self):
        return len(self.steps)

    @property
    def iterations(self) -> list[int]:
        return [s.iterations for s in self.steps]

    @property
    def gaps(self) -> list[float]:
        return [s.gap for s in self.steps if s.gap is not None]

    @property
    def nonconverged(self) -> list[int]:
        return [s.step for s in self.steps if not s.converged]

    @property
    def direct_cost(self) -> float:
        return sum(s.direct_cost for s in self.steps)

    @property
    def objective(self) -> float:
        return sum(s.objective for s in self.steps)

    def cumulative_gap(self) -> float | None:
        """Relative gap of the summed objectives over all compared steps."""
        pairs = [(s.objective, s.central_objective) for s in self.steps if s.central_objective is not None]
        if not pairs:
            return None
        total = sum(c for _, c in pairs)
        return (sum(o for o, _ in pairs) - total) / abs(total) if total else sum(o for o, _ in pairs) - total


def summarize(step: int, result: ClearingResult, keep_trace: bool = False) -> StepSummary:
    balanced = result.balanced_trades
    return StepSummary(
        step=step,
        iterations=result.iterations,
        converged=result.converged,
        objective=result.objective,
        direct_cost=direct_cost(result.instance, balanced),
        trades=balanced,
        trace=tuple(result.trace) if keep_trace else (),
    )


def run_timeseries(
    scenario: Scenario,
    tuning: TuningSchedule | None = None,
    criteria: StoppingCriteria | None = None,
    warm_start: bool = True,
    reference: bool = False,
    workers: int | None = None,
    keep_trace: bool = False,
) -> SimulationReport:
    """Clear every time step in order.

    With ``warm_start`` the iterates (trades, prices, multipliers) of step t
    start from the final iterates of step t-1. With ``reference`` each step is
    also solved centrally and the optimality gap recorded.
    """
    report = SimulationReport(step_hours=scenario.step_hours)
    previous = None
    for t in range(len(scenario)):
        instance = scenario.instance_at(t)
        result = run_negotiation(
            instance,
            init=previous if warm_start else None,
            tuning=tuning,
            criteria=criteria,
            record_trace=keep_trace,
            workers=workers,
        )
        if not result.converged:
            log.warning("step %d did not converge after %d iterations", t, result.iterations)
        summary = summarize(t, result, keep_trace)
        if reference:
            central = solve_centralized(instance)
            summary = replace(summary, central_objective=central.objective, gap=optimality_gap(result, central))
        report.steps.append(summary)
        previous = result.states
    return report


def line_power(trades: TradeMatrix, buses: Mapping[str, str], origin: str, min_trade: float = 0.0) -> float:
    """|sum of trades sold from ``origin``-bus agents to agents on other buses|.

    Trades with ``|P_nm| <= min_trade`` are treated as zero.
    """
    total = 0.0
    for (n, m), value in trades.trades.items():
        if buses[n] == origin and buses[m] != origin and abs(value) > min_trade:
            total += value
    return abs(total)


def interbus_metrics(report: SimulationReport, scenario: Scenario, min_trade: float = 0.0) -> tuple[float, float]:
    """(energy in kWh, max power in kW) through the line of a two-bus scenario."""
    names = scenario.buses
    if len(names) > 2:
        raise UnsupportedMetricError(f"inter-bus metrics need at most two buses, got {len(names)}")
    if len(names) < 2 or not report.steps:
        return 0.0, 0.0
    bus_of = {a.id: a.bus for a in scenario.base.agents}
    powers = [line_power(s.trades, bus_of, names[0], min_trade) for s in report.steps]
    return sum(p * report.step_hours for p in powers), max(powers)


@dataclass(frozen=True)
class SweepRow:
    c_value: float
    interbus_energy: float
    interbus_maxpower: float
    direct_cost: float
    iterations: float
    nonconverged: int = 0


def criterion_sweep(
    scenario: Scenario,
    values: Sequence[float],
    tuning: TuningSchedule | None = None,
    criteria: StoppingCriteria | None = None,
    warm_start: bool = True,
    workers: int | None = None,
) -> list[SweepRow]:
    """Re-run the scenario for each common criterion value.

    ``iterations`` is the mean number of RCI iterations per step. Line flows
    count effective trades only (``|P_nm| > 10 * eps_P``); smaller trades are
    below the resolution of the stopping rule.
    """
    criteria = criteria or StoppingCriteria()
    rows = []
    for c in values:
        if c < 0:
            raise ValidationError(f"criterion values must be >= 0, got {c}")
        swept = scenario.with_criterion(c)
        report = run_timeseries(swept, tuning, criteria, warm_start=warm_start, workers=workers)
        energy, peak = interbus_metrics(report, swept, 10 * criteria.eps_P)
        mean_iter = sum(report.iterations) / len(report) if len(report) else 0.0
        rows.append(SweepRow(c, energy, peak, report.direct_cost, mean_iter, len(report.nonconverged)))
        log.info("c=%g energy=%.3f peak=%.3f iterations=%.1f", c, energy, peak, mean_iter)
    return rows
