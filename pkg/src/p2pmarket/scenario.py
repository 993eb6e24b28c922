"""Scenario files, synthetic time series and the bundled two-bus case.

Scenario files are JSON. Time-varying bounds are either inlined under
``timesteps`` (a list of ``{agent_id: [p_min, p_max]}`` objects) or kept in a
sidecar CSV named by ``series_file`` with columns ``step,agent,p_min,p_max``.
The synthetic wind, solar and household series stand in for measured data and
are not calibrated against any real site.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigurationError, ValidationError
from .market import DISTANCE, AgentSpec, MarketInstance, Role, TradeGraph, distance_characteristics
from .simulation import Bounds, Scenario

SCHEMA_VERSION = 1
BUNDLED = "week.json"

_NUMBER = {"type": "number"}
SCHEMA = {
    "type": "object",
    "required": ["schema_version", "agents"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "step_hours": {"type": "number", "exclusiveMinimum": 0},
        "criterion": {
            "type": ["object", "null"],
            "required": ["id", "value"],
            "additionalProperties": False,
            "properties": {
                "id": {"type": "string"},
                "value": _NUMBER,
                "sign_rule": {"const": "+producers/-consumers"},
            },
        },
        "inter_bus_gamma": {"type": "number", "minimum": 0},
        "graph": {
            "oneOf": [
                {"const": "complete"},
                {
                    "type": "object",
                    "required": ["edges"],
                    "additionalProperties": False,
                    "properties": {
                        "edges": {
                            "type": "array",
                            "items": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                        }
                    },
                },
            ]
        },
        "agents": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "role", "a", "b", "p_min", "p_max"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"type": "string"},
                    "role": {"enum": [r.value for r in Role]},
                    "bus": {"type": "string"},
                    "position": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
                    "a": _NUMBER,
                    "b": _NUMBER,
                    "d": _NUMBER,
                    "p_min": _NUMBER,
                    "p_max": _NUMBER,
                    "criterion_values": {"type": "object", "additionalProperties": _NUMBER},
                },
            },
        },
        "timesteps": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
            },
        },
        "series_file": {"type": "string"},
    },
}


class ScenarioParseError(ConfigurationError):
    """Scenario file does not match the schema."""


def _path_str(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def scenario_from_dict(doc: dict, base_dir: Path | None = None) -> Scenario:
    """Validate a parsed scenario document and build a :class:`Scenario`."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    error = next(iter(sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))), None)
    if error is not None:
        raise ScenarioParseError(f"{_path_str(error.absolute_path)}: {error.message}")

    crit = doc.get("criterion")
    criterion_id = crit["id"] if crit else DISTANCE
    common = float(crit["value"]) if crit else None
    agents = []
    for i, entry in enumerate(doc["agents"]):
        role = Role(entry["role"])
        values = {}
        if common is not None:
            values[criterion_id] = common if role is Role.PRODUCER else -common
        values.update({k: float(v) for k, v in entry.get("criterion_values", {}).items()})
        unknown = set(values) - {criterion_id}
        if unknown:
            raise ScenarioParseError(f"agents[{i}].criterion_values: no characteristics for {sorted(unknown)}")
        try:
            agents.append(
                AgentSpec(
                    id=entry["id"],
                    role=role,
                    a=float(entry["a"]),
                    b=float(entry["b"]),
                    d=float(entry.get("d", 0.0)),
                    p_min=float(entry["p_min"]),
                    p_max=float(entry["p_max"]),
                    position=tuple(entry.get("position", (0.0, 0.0))),
                    bus=entry.get("bus", "1"),
                    criterion_values=values,
                    kind=entry.get("kind", ""),
                )
            )
        except ValidationError as exc:
            raise ValidationError(f"agents[{i}]: {exc}") from None

    graph_spec = doc.get("graph", "complete")
    if graph_spec == "complete":
        graph, edges = TradeGraph.producer_consumer(agents), None
    else:
        edges = tuple(tuple(e) for e in graph_spec["edges"])
        graph = TradeGraph.from_edges([a.id for a in agents], edges)
    gamma = float(doc.get("inter_bus_gamma", 1.0))
    instance = MarketInstance(tuple(agents), graph, distance_characteristics(agents, gamma, criterion_id))

    if "series_file" in doc:
        if "timesteps" in doc:
            raise ScenarioParseError("timesteps: give either inline timesteps or series_file, not both")
        steps = read_series_csv((base_dir or Path(".")) / doc["series_file"])
    else:
        steps = [{n: (float(v[0]), float(v[1])) for n, v in step.items()} for step in doc.get("timesteps", [])]
    return Scenario(
        base=instance,
        timesteps=tuple(steps),
        step_hours=float(doc.get("step_hours", 1.0)),
        name=doc.get("name", ""),
        criterion_id=criterion_id,
        criterion_value=common,
        inter_bus_gamma=gamma,
        graph_edges=edges,
    )


def scenario_to_dict(scenario: Scenario, series_file: str | None = None) -> dict:
    """Canonical document for ``scenario``; loading it back yields an equal document."""
    common = scenario.criterion_value
    agents = []
    for a in scenario.base.agents:
        entry = {
            "id": a.id,
            "role": a.role.value,
            "bus": a.bus,
            "position": [float(x) for x in a.position],
            "a": float(a.a),
            "b": float(a.b),
            "d": float(a.d),
            "p_min": float(a.p_min),
            "p_max": float(a.p_max),
        }
        if a.kind:
            entry["kind"] = a.kind
        implied = {}
        if common is not None:
            implied[scenario.criterion_id] = common if a.is_producer else -common
        if dict(a.criterion_values) != implied:
            entry["criterion_values"] = {k: float(v) for k, v in a.criterion_values.items()}
        agents.append(entry)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": scenario.name,
        "step_hours": float(scenario.step_hours),
        "criterion": None
        if common is None
        else {"id": scenario.criterion_id, "value": float(common), "sign_rule": "+producers/-consumers"},
        "inter_bus_gamma": float(scenario.inter_bus_gamma),
        "graph": "complete" if scenario.graph_edges is None else {"edges": [list(e) for e in scenario.graph_edges]},
        "agents": agents,
    }
    if series_file:
        doc["series_file"] = series_file
    else:
        doc["timesteps"] = [{n: [lo, hi] for n, (lo, hi) in step.items()} for step in scenario.timesteps]
    return doc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ScenarioParseError(f"{path}: {exc.strerror or exc}") from None
    return scenario_from_dict(doc, base_dir=path.parent)


def save_scenario(scenario: Scenario, path: str | Path, series_file: str | None = None) -> None:
    """Write ``scenario`` in canonical form; optionally put the series in a sidecar CSV."""
    path = Path(path)
    if series_file:
        write_series_csv(scenario.timesteps, path.parent / series_file)
    path.write_text(dumps(scenario_to_dict(scenario, series_file)))


def read_series_csv(path: Path) -> list[dict[str, Bounds]]:
    steps: list[dict[str, Bounds]] = []
    if not path.is_file():
        raise ScenarioParseError(f"series file not found: {path}")
    with open(path, newline="") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            try:
                t = int(row["step"])
                bounds = (float(row["p_min"]), float(row["p_max"]))
                agent = row["agent"]
            except (KeyError, TypeError, ValueError):
                raise ScenarioParseError(f"{path.name}:{line}: expected step,agent,p_min,p_max") from None
            while len(steps) <= t:
                steps.append({})
            steps[t][agent] = bounds
    return steps


def write_series_csv(timesteps, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "agent", "p_min", "p_max"])
        for t, step in enumerate(timesteps):
            for agent, (lo, hi) in step.items():
                writer.writerow([t, agent, repr(float(lo)), repr(float(hi))])


def bundled_path() -> Path:
    return Path(str(resources.files("p2pmarket") / "data" / BUNDLED))


def load_bundled() -> Scenario:
    """The bundled 12-agent, two-bus, one-week scenario."""
    return load_scenario(bundled_path())


# -- synthetic series ---------------------------------------------------------


@dataclass(frozen=True)
class SeriesSpec:
    """Parameters of one synthetic series.

    ``kind`` is ``"wind"`` (clipped AR(1) capacity factor), ``"solar"``
    (diurnal half-sine times a daily cloud factor) or ``"household"``
    (double-peak daily load with a +/- ``flexibility`` band).
    """

    kind: str
    capacity: float
    seed: int = 0
    start_hour: int = 0
    flexibility: float = 0.3

    def __post_init__(self):
        if self.kind not in ("wind", "solar", "household"):
            raise ConfigurationError(f"unknown series kind {self.kind!r}")
        if self.capacity < 0:
            raise ConfigurationError("capacity must be >= 0")
        if not 0 <= self.flexibility < 1:
            raise ConfigurationError("flexibility must be in [0, 1)")


def _household_profile(hour: np.ndarray) -> np.ndarray:
    morning = np.exp(-0.5 * ((hour - 8.0) / 1.5) ** 2)
    evening = np.exp(-0.5 * ((hour - 19.0) / 2.0) ** 2)
    return 0.3 + 0.45 * morning + 0.65 * evening


def generate_series(spec: SeriesSpec, steps: int) -> list[Bounds]:
    """Role-signed (p_min, p_max) per hourly step.

    Renewables are must-take, so p_min == p_max. Households get
    ``(-P_up, -P_down)`` where the band is the load scaled by 1 +/- flexibility.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    rng = np.random.default_rng(spec.seed)
    hours = (spec.start_hour + np.arange(steps)) % 24
    cap = spec.capacity
    if spec.kind == "wind":
        mean, phi, sigma = 0.35, 0.95, 0.08
        x = np.empty(steps)
        state = mean + rng.normal(0.0, 0.15)
        for t in range(steps):
            state = mean + phi * (state - mean) + rng.normal(0.0, sigma)
            x[t] = state
        power = cap * np.clip(x, 0.0, 1.0)
        return [(float(p), float(p)) for p in power]
    if spec.kind == "solar":
        days = (spec.start_hour + np.arange(steps)) // 24
        clouds = rng.uniform(0.25, 1.0, size=int(days.max()) + 1)[days]
        hourly = np.clip(1.0 + rng.normal(0.0, 0.1, size=steps), 0.0, None)
        envelope = np.where((hours > 6) & (hours < 18), np.sin(np.pi * (hours - 6) / 12.0), 0.0)
        power = np.clip(cap * envelope * clouds * hourly, 0.0, cap)
        return [(float(p), float(p)) for p in power]
    flex = spec.flexibility
    profile = _household_profile(hours.astype(float)) / _household_profile(np.array([19.0]))[0]
    noise = np.clip(1.0 + rng.normal(0.0, 0.08, size=steps), 0.5, 1.5)
    load = np.clip(profile * noise * cap / (1.0 + flex), 0.0, cap / (1.0 + flex))
    return [(-float(x * (1.0 + flex)), -float(x * (1.0 - flex))) for x in load]


# Case-study agent parameters. Positions (km) are synthetic: each bus is a ~100 m
# cluster and the buses are 3 km apart.
CASE_AGENTS = (
    # id, kind, role, bus, a, b, p_min, p_max, position
    ("1", "wind", Role.PRODUCER, "1", 0.05, 3.0, None, None, (0.0125, 0.0875)),
    ("2", "household", Role.CONSUMER, "1", 0.05, 3.0, None, None, (0.0375, 0.025)),
    ("3", "fossil", Role.PRODUCER, "1", 0.056, 3.0, 15.0, 105.0, (0.0, 0.0)),
    ("4", "household", Role.CONSUMER, "1", 0.056, 3.0, None, None, (0.0625, 0.0625)),
    ("5", "industrial", Role.CONSUMER, "1", 0.04, 8.0, -120.0, -6.0, (0.075, 0.0)),
    ("6", "solar", Role.PRODUCER, "1", 0.05, 3.0, None, None, (0.0375, 0.1)),
    ("7", "household", Role.CONSUMER, "2", 0.05, 3.0, None, None, (3.0375, 0.025)),
    ("8", "household", Role.CONSUMER, "2", 0.06, 4.0, None, None, (3.0625, 0.0625)),
    ("9", "wind", Role.PRODUCER, "2", 0.05, 3.0, None, None, (3.0125, 0.0875)),
    ("10", "fossil", Role.PRODUCER, "2", 0.06, 4.0, 20.0, 90.0, (3.0, 0.0)),
    ("11", "industrial", Role.CONSUMER, "2", 0.05, 8.0, -120.0, -10.0, (3.075, 0.0)),
    ("12", "solar", Role.PRODUCER, "2", 0.05, 3.0, None, None, (3.0375, 0.1)),
)

CAPACITY = {"wind": 100.0, "solar": 50.0, "household": 20.0}


def synthetic_scenario(
    steps: int = 168,
    seed: int = 0,
    criterion_value: float | None = 1.0,
    start_hour: int = 0,
    inter_bus_gamma: float = 1.0,
    name: str = "",
) -> Scenario:
    """The twelve case-study agents with synthetic wind, solar and household series.

    Renewable output is curtailed pro rata in any hour where must-take
    generation plus the fossil minimum would exceed the largest possible
    consumption, so every step admits a feasible dispatch.
    """
    series: dict[str, list[Bounds]] = {}
    for i, (aid, kind, *_rest) in enumerate(CASE_AGENTS):
        if kind in CAPACITY:
            spec = SeriesSpec(kind, CAPACITY[kind], seed=seed * 1000 + i, start_hour=start_hour)
            series[aid] = generate_series(spec, steps)

    static_min = {aid: lo for aid, _, _, _, _, _, lo, _, _ in CASE_AGENTS if lo is not None}
    roles = {aid: role for aid, _, role, *_ in CASE_AGENTS}
    timesteps = []
    for t in range(steps):
        step = {aid: s[t] for aid, s in series.items()}
        must_take = sum(step[a][0] for a in step if roles[a] is Role.PRODUCER)
        floor = sum(v for a, v in static_min.items() if roles[a] is Role.PRODUCER)
        absorb = -sum(step[a][0] for a in step if roles[a] is Role.CONSUMER)
        absorb -= sum(v for a, v in static_min.items() if roles[a] is Role.CONSUMER)
        if must_take + floor > absorb and must_take > 0:
            scale = max(absorb - floor, 0.0) / must_take * (1.0 - 1e-9)
            for a in step:
                if roles[a] is Role.PRODUCER:
                    v = step[a][0] * scale
                    step[a] = (v, v)
        timesteps.append(step)

    agents = []
    for aid, kind, role, bus, a, b, lo, hi, pos in CASE_AGENTS:
        if lo is None:
            lo, hi = timesteps[0][aid]
        values = {} if criterion_value is None else {DISTANCE: criterion_value if role is Role.PRODUCER else -criterion_value}
        agents.append(AgentSpec(aid, role, a, b, lo, hi, 0.0, pos, bus, values, kind))
    instance = MarketInstance(
        tuple(agents), TradeGraph.producer_consumer(agents), distance_characteristics(agents, inter_bus_gamma)
    )
    return Scenario(
        base=instance,
        timesteps=tuple(timesteps),
        step_hours=1.0,
        name=name or f"synthetic-seed{seed}",
        criterion_value=criterion_value,
        inter_bus_gamma=inter_bus_gamma,
    )
