from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from typing import TYPE_CHECKING

from ._base import QtopcError
from ._bounds import BoundKind, BoundSpec, convergence_rate, stability_report, success_floor, target_probability_floor
from ._config import ExperimentConfig, apply_overrides, config_fields, load_config
from ._experiments import REPRODUCIBLE, SIMULATION_COLUMNS, reproduce, run_experiment, simulate
from ._log import configure_logging
from ._sinks import RowFormatter, StreamSink

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger("qtopc.cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

_TWO_LEVEL = (BoundKind.CLOSED, BoundKind.DEPOLARIZING, BoundKind.PHASE_DAMPING, BoundKind.AMPLITUDE_DAMPING)
_TABLE_VARIANTS = (BoundKind.DEPOLARIZING, BoundKind.AMPLITUDE_DAMPING)


def _add_common(parser: argparse.ArgumentParser, *, config_flags: bool = True) -> None:
    parser.add_argument("--log-level", default="INFO", help="level of the qtopc logger (default: %(default)s)")
    if not config_flags:
        return
    parser.add_argument("--config", help="INI file with experiment settings")
    group = parser.add_argument_group("experiment settings", "each overrides the key of the same name in --config")
    for item in config_fields():
        group.add_argument(f"--{item.name.replace('_', '-')}", dest=item.name, metavar="VALUE",
                           help=f"{item.metadata['help']} (default: {item.default})")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtopc", description="Quantum time-optimal predictive control.")
    commands = parser.add_subparsers(dest="command", required=True)

    _add_common(commands.add_parser("simulate", help="apply one open-loop optimal schedule to the true system"))
    _add_common(commands.add_parser("qtopc", help="run a single feedback loop"))
    _add_common(commands.add_parser("montecarlo", help="run a Monte-Carlo campaign"))

    bounds = commands.add_parser("bounds", help="print stability conditions and success floors as JSON")
    _add_common(bounds, config_flags=False)
    bounds.add_argument("--delta-bar", type=float, default=0.0)
    bounds.add_argument("--gamma-bar", type=float, default=0.0)
    bounds.add_argument("--ts", type=float, default=1.0)
    bounds.add_argument("--lambda0", type=float, default=0.04)
    bounds.add_argument("--steps", type=int, default=20, help="number of steps N")
    bounds.add_argument("--periods", type=int, default=1, help="periods l spanned by the prediction")
    bounds.add_argument("--dim", type=int, default=2)
    bounds.add_argument("--p-d", type=float, default=None, help="depolarizing probability per period")
    bounds.add_argument("--eps-bar", type=float, default=None, help="override of 2 delta_bar + gamma_bar")
    bounds.add_argument("--window", type=int, default=1, help="window length of the convergence rate")

    reproduce_parser = commands.add_parser("reproduce", help="reproduce a published table or figure")
    reproduce_parser.add_argument("identifier", help=f"one of {', '.join(REPRODUCIBLE)}")
    _add_common(reproduce_parser)
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(config, {item.name: getattr(args, item.name) for item in config_fields()})


def _bounds(args: argparse.Namespace) -> dict[str, object]:
    report = stability_report(
        args.delta_bar, args.gamma_bar, args.ts, args.lambda0, args.steps, args.dim, args.p_d, eps_bar=args.eps_bar
    )
    floors = {}
    for kind in BoundKind:
        if kind is BoundKind.APPENDIX_A or (kind in _TWO_LEVEL and args.dim != 2):
            continue
        spec = BoundSpec(kind, args.delta_bar, args.gamma_bar, args.ts, args.periods, args.dim)
        floors[kind.value] = success_floor(spec)._asdict()
        if kind in _TABLE_VARIANTS:
            floors[f"{kind.value}/table"] = success_floor(dataclasses.replace(spec, variant="table"))._asdict()

    eps_ts = report.eps_bar * args.ts
    result: dict[str, object] = {"stability": report.to_dict(), "floors": floors}
    try:
        result["convergence_rate"] = convergence_rate(eps_ts, args.window)
        result["target_probability_floor"] = target_probability_floor(eps_ts, args.steps, args.window)
    except ValueError as exc:
        logger.warning("No convergence rate: %s", exc)
        result["convergence_rate"] = result["target_probability_floor"] = None
    return result


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        configure_logging(level=args.log_level)
    except ValueError as exc:
        print(f"qtopc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    try:
        match args.command:
            case "bounds":
                print(json.dumps(_bounds(args), sort_keys=True, indent=2))
            case "simulate":
                result = simulate(_config(args))
                with StreamSink(sys.stdout, RowFormatter.for_columns(SIMULATION_COLUMNS), header=True) as sink:
                    sink.handle_rows(result.rows())
                print(f"t_f = {result.solution.t_f:.6g}, final infidelity = {result.final_infidelity:.6g}")
            case "qtopc":
                summary = run_experiment(_config(args).replace(runs=1))
                print(f"final infidelity = {summary.infidelity_mean:.6g}")
            case "montecarlo":
                summary = run_experiment(_config(args))
                stderr = "n/a" if summary.infidelity_stderr is None else f"{summary.infidelity_stderr:.3g}"
                print(f"mean infidelity = {summary.infidelity_mean:.6g} +- {stderr} over {summary.runs} run(s)")
            case "reproduce":
                config = _config(args)
                report = reproduce(args.identifier, runs=config.runs, seed=config.seed, out=config.out, base=config)
                for check in report.checks:
                    print(f"[{'PASS' if check.passed else 'FAIL'}] {check.name}: {check.detail}")
                if not report.passed:
                    return EXIT_CHECK_FAILED
    except (QtopcError, ValueError) as exc:
        print(f"qtopc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK
