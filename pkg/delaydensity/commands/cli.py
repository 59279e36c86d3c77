from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from delaydensity.logging_config import configure_logging, run_scope
from delaydensity.models.run_config import RunConfig, RunConfigError, load_run_config, parse_run_config
from delaydensity.services.augmentation_engine import AssumptionViolationError
from delaydensity.services.export_service import render_table, report_path_for, write_report, write_table
from delaydensity.services.fokker_planck_engine import SolverError
from delaydensity.services.run_service import (
    DENSITY_METHODS,
    TableResult,
    run_bridge,
    run_compare,
    run_density,
    run_kernel,
    run_simulate,
)

logger = logging.getLogger(__name__)


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_NUMERIC = 4

# First match wins; AssumptionViolationError is also a ValueError.
_EXIT_CODES: tuple[tuple[type[BaseException], int], ...] = (
    (AssumptionViolationError, EXIT_ASSUMPTION),
    (SolverError, EXIT_NUMERIC),
    (np.linalg.LinAlgError, EXIT_NUMERIC),
    (FloatingPointError, EXIT_NUMERIC),
    (ValueError, EXIT_CONFIG),
)


def exit_code_for(exc: BaseException) -> int | None:
    for error_type, code in _EXIT_CODES:
        if isinstance(exc, error_type):
            return code
    return None


def _float_list(raw: str) -> list[float]:
    try:
        return [float(item) for item in raw.split(",") if item.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {raw!r}") from exc


def _method_list(raw: str) -> list[str]:
    return [item.strip().lower() for item in raw.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--out", default=None, help="output CSV path (default: output.path or stdout)")
    common.add_argument("--seed", type=int, default=None, help="overrides mc.seed")
    common.add_argument("--log-level", default=None)

    parser = argparse.ArgumentParser(prog="delaydensity", description="Densities of scalar delay SDEs")
    commands = parser.add_subparsers(dest="command", required=True)

    density = commands.add_parser("density", parents=[common], help="P_A(x, t) on the output abscissae")
    density.add_argument("--t", type=float, required=True)
    density.add_argument("--method", default="analytic", choices=DENSITY_METHODS)

    compare = commands.add_parser("compare", parents=[common], help="compare methods on shared abscissae")
    compare.add_argument("--t", type=float, required=True)
    compare.add_argument("--methods", type=_method_list, default=["analytic", "fp"])

    simulate = commands.add_parser("simulate", parents=[common], help="Monte Carlo samples or histograms")
    simulate.add_argument("--times", type=_float_list, default=None)
    simulate.add_argument("--raw", action="store_true", help="write path,time,value rows")

    kernel = commands.add_parser("kernel", parents=[common], help="dump Q_k on grid nodes")
    kernel.add_argument("--method", default="fp", choices=DENSITY_METHODS)

    bridge = commands.add_parser("bridge", parents=[common], help="bridge density between two pinned states")
    bridge.add_argument("--method", default="analytic", choices=("analytic", "fp"))
    return parser


def _with_seed(config: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return config
    document = config.model_dump()
    document["mc"]["seed"] = seed
    return parse_run_config(document)


def _emit(result: TableResult, out: str | None) -> None:
    if out is None:
        sys.stdout.write(render_table(result))
        return
    write_table(out, result)


def _dispatch(args: argparse.Namespace) -> None:
    config = _with_seed(load_run_config(args.config), args.seed)
    out = args.out or config.output.path

    if args.command == "density":
        _emit(run_density(config, args.t, args.method), out)
    elif args.command == "compare":
        if out is None:
            raise RunConfigError("compare needs --out or output.path for the curves and report.")
        table, report = run_compare(config, args.t, args.methods)
        write_table(out, table)
        write_report(report_path_for(out), report)
    elif args.command == "simulate":
        _emit(run_simulate(config, args.times or [], raw=args.raw), out)
    elif args.command == "kernel":
        _emit(run_kernel(config, args.method), out)
    elif args.command == "bridge":
        _emit(run_bridge(config, args.method), out)


def run_cli(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    with run_scope() as run_id:
        logger.info("Starting %s config=%s run=%s", args.command, Path(args.config).name, run_id)
        try:
            _dispatch(args)
        except Exception as exc:
            code = exit_code_for(exc)
            if code is None:
                raise
            logger.error("Run failed exit=%s error=%s", code, type(exc).__name__)
            sys.stderr.write(f"error: {exc}\n")
            return code
    return EXIT_OK
