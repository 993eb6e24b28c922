"""Command-line entry point: run, compare, sweep and gen.

Every command writes plain CSV plus a ``report.json`` of aggregate
statistics into ``--out``. Floats are written with ``repr`` so that
re-parsing a file reproduces the values exactly.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
from pathlib import Path

from .errors import ConfigurationError, InfeasibleError, MarketError
from .negotiation import run_negotiation
from .rci import StoppingCriteria, TuningSchedule
from .reference import optimality_gap, solve_centralized
from .scenario import bundled_path, load_scenario, save_scenario, synthetic_scenario
from .simulation import Scenario, criterion_sweep

EXIT_VALIDATION = 2
EXIT_NONCONVERGED = 3

DEFAULT_SWEEP = ",".join(str(0.25 * i) for i in range(13))

log = logging.getLogger("p2pmarket")


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_report(path: Path, report: dict) -> None:
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--scenario", type=Path, help="scenario file (default: bundled one-week case)")
    parser.add_argument("--seed", type=int, help="use a synthetic scenario with this seed instead of --scenario")
    parser.add_argument("--steps", type=int, help="only the first N time steps")
    parser.add_argument("--criterion-value", type=float, help="override the common criterion magnitude c")
    parser.add_argument("--tuning", type=str, help="a0,ae,b0,be,eta,delta")
    parser.add_argument("--eps", type=str, help="eps_lambda,eps_P,eps_mu")
    parser.add_argument("--max-iter", type=int, default=50_000)
    parser.add_argument("--warm-start", type=_bool, default=True, metavar="BOOL")
    parser.add_argument("--workers", type=int, help="threads per negotiation round (same results as serial)")
    parser.add_argument("--strict", action="store_true", help="exit nonzero if any negotiation fails to converge")
    parser.add_argument("--out", type=Path, default=Path("."))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="p2pmarket", description="Peer-to-peer market clearing with RCI.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="clear one time step and write the iteration trace")
    _common(run)
    run.add_argument("--step", type=int, default=0)

    compare = sub.add_parser("compare", help="RCI against the centralized solver per step")
    _common(compare)

    sweep = sub.add_parser("sweep", help="re-run the scenario over criterion values")
    _common(sweep)
    sweep.add_argument(
        "values", nargs="?", type=_floats, default=_floats(DEFAULT_SWEEP), help="comma-separated c values (default 0,0.25,...,3)"
    )

    gen = sub.add_parser("gen", help="write a synthetic scenario file")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--steps", type=int, default=168)
    gen.add_argument("--criterion-value", type=float, default=1.0)
    gen.add_argument("--inter-bus-gamma", type=float, default=1.0)
    gen.add_argument("--start-hour", type=int, default=0)
    gen.add_argument("--series-file", type=str, help="put the series in this sidecar CSV")
    gen.add_argument("--out", type=Path, default=Path("scenario.json"))
    return parser


def _scenario(args) -> Scenario:
    if args.seed is not None and args.scenario is None:
        scenario = synthetic_scenario(args.steps or 168, args.seed)
    else:
        scenario = load_scenario(args.scenario or bundled_path())
    if args.steps is not None:
        if args.steps < 1:
            raise ConfigurationError("--steps must be >= 1")
        scenario = scenario.with_timesteps(scenario.timesteps[: args.steps])
    if args.criterion_value is not None:
        if args.criterion_value < 0:
            raise ConfigurationError("--criterion-value must be >= 0")
        scenario = scenario.with_criterion(args.criterion_value)
    return scenario


def _settings(args) -> tuple[TuningSchedule, StoppingCriteria]:
    tuning = TuningSchedule.parse(args.tuning) if args.tuning else TuningSchedule()
    if args.eps:
        criteria = StoppingCriteria.parse(args.eps, max_iterations=args.max_iter)
    else:
        criteria = StoppingCriteria(max_iterations=args.max_iter)
    return tuning, criteria


def cmd_run(args) -> int:
    scenario = _scenario(args)
    tuning, criteria = _settings(args)
    if len(scenario) == 0:
        instance = scenario.base
    elif 0 <= args.step < len(scenario):
        instance = scenario.instance_at(args.step)
    else:
        raise ConfigurationError(f"--step must be in [0, {len(scenario) - 1}]")
    result = run_negotiation(instance, tuning=tuning, criteria=criteria, workers=args.workers)
    write_csv(
        args.out / "trace.csv",
        ["iteration", "consensus_err", "reciprocity_err", "objective"],
        ((r.iteration, r.consensus_err, r.reciprocity_err, r.objective) for r in result.trace),
    )
    write_report(
        args.out / "report.json",
        {
            "command": "run",
            "scenario": scenario.name,
            "step": args.step,
            "iterations": result.iterations,
            "converged": result.converged,
            "objective": result.objective,
            "consensus_error": result.consensus_error(),
            "reciprocity_error": result.reciprocity_error(),
            "net_injections": result.net_injections,
        },
    )
    return 0 if result.converged or not args.strict else EXIT_NONCONVERGED


def cmd_compare(args) -> int:
    scenario = _scenario(args)
    tuning, criteria = _settings(args)
    rows = []
    previous = None
    for t in range(len(scenario)):
        instance = scenario.instance_at(t)
        result = run_negotiation(
            instance,
            init=previous if args.warm_start else None,
            tuning=tuning,
            criteria=criteria,
            record_trace=False,
            workers=args.workers,
        )
        central = solve_centralized(instance)
        rows.append((t, result.iterations, optimality_gap(result, central), result.converged, result.objective, central.objective))
        previous = result.states
    write_csv(args.out / "compare.csv", ["step", "iterations", "gap", "converged"], (r[:4] for r in rows))
    gaps = [r[2] for r in rows]
    rci_total = sum(r[4] for r in rows)
    central_total = sum(r[5] for r in rows)
    nonconverged = [r[0] for r in rows if not r[3]]
    write_report(
        args.out / "report.json",
        {
            "command": "compare",
            "scenario": scenario.name,
            "steps": len(rows),
            "max_abs_gap": max((abs(g) for g in gaps), default=0.0),
            "median_abs_gap": statistics.median(abs(g) for g in gaps) if gaps else 0.0,
            "cumulative_gap": (rci_total - central_total) / abs(central_total) if central_total else 0.0,
            "mean_iterations": statistics.fmean(r[1] for r in rows) if rows else 0.0,
            "max_iterations": max((r[1] for r in rows), default=0),
            "nonconverged_steps": nonconverged,
        },
    )
    return EXIT_NONCONVERGED if nonconverged and args.strict else 0


def cmd_sweep(args) -> int:
    scenario = _scenario(args)
    tuning, criteria = _settings(args)
    rows = criterion_sweep(scenario, args.values, tuning, criteria, warm_start=args.warm_start, workers=args.workers)
    write_csv(
        args.out / "sweep.csv",
        ["c_value", "interbus_energy", "interbus_maxpower", "direct_cost", "iterations"],
        ((r.c_value, r.interbus_energy, r.interbus_maxpower, r.direct_cost, r.iterations) for r in rows),
    )
    base = rows[0].interbus_energy if rows else 0.0
    write_report(
        args.out / "report.json",
        {
            "command": "sweep",
            "scenario": scenario.name,
            "steps": len(scenario),
            "values": [r.c_value for r in rows],
            "energy_ratio_to_first": [r.interbus_energy / base if base else 0.0 for r in rows],
            "nonconverged_steps": {repr(r.c_value): r.nonconverged for r in rows},
        },
    )
    return EXIT_NONCONVERGED if args.strict and any(r.nonconverged for r in rows) else 0


def cmd_gen(args) -> int:
    scenario = synthetic_scenario(
        args.steps,
        args.seed,
        criterion_value=args.criterion_value,
        start_hour=args.start_hour,
        inter_bus_gamma=args.inter_bus_gamma,
    )
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(scenario, args.out, series_file=args.series_file)
    return 0


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sweep": cmd_sweep, "gen": cmd_gen}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    if args.command != "gen":
        args.out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MarketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
