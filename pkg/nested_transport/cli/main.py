"""Command-line entry point: python -m nested_transport.cli.main <command> [options].

Exit codes: 0 success, 2 invalid configuration, 3 solver failure or non-nested solution.
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from nested_transport.export import (
    certificate_to_frame,
    error_curve_svg,
    frame_to_csv,
    hedonic_pair_svg,
    labels_to_csv,
    tessellation_svg,
    write_reports_csv,
)
from nested_transport.monitor import SolverMonitor
from nested_transport.nest_analysis import certify_nested_apriori
from nested_transport.problems import build_congestion
from nested_transport.schemas import BenchmarkConfig, RunConfig
from nested_transport.cli.benchmark import run_benchmark, sweep_error_curve
from nested_transport.cli.router import SolverRouter

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAILED = 3

_RUN_FIELDS = (
    "problem", "example", "n", "measure", "measure2", "method", "cost", "A", "parameters", "grid", "tol", "maxit",
    "C0", "C_interval", "C", "inner", "energy_weight", "k_samples", "seed", "report_csv", "svg", "labels_csv",
    "curve_csv", "log_file",
)


def _add_run_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON run file; flags override its values")
    parser.add_argument("--problem", choices=["congestion", "hedonic"])
    parser.add_argument("--example", choices=["E1", "E2", "E3", "E4", "curve-x^1.5", "explicit"])
    parser.add_argument("--n", type=int)
    parser.add_argument("--measure", choices=["uniform", "product_xy"])
    parser.add_argument("--measure2", choices=["uniform", "product_xy"])
    parser.add_argument("--method",
                        choices=["newton", "damped", "nested-bisection", "nested-newton", "nested-theoretical"])
    parser.add_argument("--cost", choices=["squared_distance", "bilinear"])
    parser.add_argument("--A", type=float, help="F(y) = y^2 / A with y_i = i / N (bilinear cost)")
    parser.add_argument("--parameters", type=float, nargs="+", help="explicit target parameters")
    parser.add_argument("--grid", type=int, help="grid resolution M")
    parser.add_argument("--tol", type=float)
    parser.add_argument("--maxit", type=int)
    parser.add_argument("--C0", type=float)
    parser.add_argument("--C-interval", dest="C_interval", type=float, nargs=2, metavar=("LO", "HI"))
    parser.add_argument("--C", type=float, help="hedonic constant")
    parser.add_argument("--inner", choices=["bisection", "newton"])
    parser.add_argument("--energy-weight", dest="energy_weight", type=float, help="w in w sum nu ln nu")
    parser.add_argument("--k-samples", dest="k_samples", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--report-csv", dest="report_csv")
    parser.add_argument("--svg")
    parser.add_argument("--labels-csv", dest="labels_csv", help="grid labels of the solved tessellation")
    parser.add_argument("--curve-csv", dest="curve_csv", help="Error(C) sweep over the C interval")
    parser.add_argument("--log-file", dest="log_file")


def _add_sweep_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--c-min", type=float, default=-6.0)
    parser.add_argument("--c-max", type=float, default=0.0)
    parser.add_argument("--c-step", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nested_transport",
                                     description="Nested solvers for semi-discrete transport with congestion")
    parser.add_argument("--verbose", action="store_true", help="log solver iterations")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (("solve", "solve one configuration and write its report"),
                       ("check", "solve and test the tessellation for nestedness"),
                       ("certify", "a-priori nestedness certificate (entropy energy)")):
        _add_run_flags(sub.add_parser(name, help=text))

    sweep = sub.add_parser("sweep", help="sample Error(C) over a grid of C")
    _add_run_flags(sweep)
    _add_sweep_flags(sweep)

    plot = sub.add_parser("plot", help="tessellation SVG of a solved configuration")
    _add_run_flags(plot)
    _add_sweep_flags(plot)
    plot.add_argument("--curve-svg", dest="curve_svg", help="also draw Error(C) as a polyline")

    bench = sub.add_parser("benchmark", help="methods x N matrix as one CSV table")
    bench.add_argument("--config", help="JSON benchmark file; flags override its values")
    bench.add_argument("--problem", choices=["congestion", "hedonic"])
    bench.add_argument("--example", choices=["E1", "E2", "E3", "E4", "curve-x^1.5"])
    bench.add_argument("--measure", choices=["uniform", "product_xy"])
    bench.add_argument("--measure2", choices=["uniform", "product_xy"])
    bench.add_argument("--methods", nargs="*")
    bench.add_argument("--n-values", dest="n_values", type=int, nargs="*")
    bench.add_argument("--grid", type=int)
    bench.add_argument("--workers", type=int)
    bench.add_argument("--no-timing", dest="record_timing", action="store_const", const=False)
    bench.add_argument("--output")

    schema = sub.add_parser("schema", help="print the JSON schema of run (or benchmark) files")
    schema.add_argument("--benchmark", action="store_true")
    return parser


def _read_json(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, "r") as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ValueError(f"{path} must hold a JSON object")
    return data


def load_run_config(args: argparse.Namespace) -> RunConfig:
    data = _read_json(args.config)
    for name in _RUN_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return RunConfig.model_validate(data)


def load_benchmark_config(args: argparse.Namespace) -> BenchmarkConfig:
    data = _read_json(args.config)
    for name in ("problem", "example", "measure", "measure2", "methods", "n_values", "grid", "workers",
                 "record_timing", "output"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return BenchmarkConfig.model_validate(data)


def _c_grid(args: argparse.Namespace) -> np.ndarray:
    if args.c_step <= 0 or args.c_max < args.c_min:
        raise ValueError("Sweep needs c_min <= c_max and a positive c_step")
    count = int(round((args.c_max - args.c_min) / args.c_step)) + 1
    return args.c_min + args.c_step * np.arange(count)


def _monitor(config: RunConfig) -> SolverMonitor:
    return SolverMonitor(config.log_file) if config.log_file else SolverMonitor()


def cmd_solve(config: RunConfig) -> int:
    solved = SolverRouter(_monitor(config)).run(config)
    report = solved.report
    if config.report_csv:
        write_reports_csv([report], config.report_csv)
    else:
        print(report.model_dump_json(indent=2))
    tessellations = solved.tessellations()
    if config.svg and tessellations:
        _draw(tessellations, config.svg)
    if config.labels_csv and tessellations:
        labels_to_csv(tessellations[0], config.labels_csv)
    if config.curve_csv and config.problem == "congestion":
        lo, hi = config.C_interval
        frame, _ = sweep_error_curve(config, np.linspace(lo, hi, int(round((hi - lo) / 0.05)) + 1))
        frame_to_csv(frame, config.curve_csv)
    return EXIT_OK if report.succeeded else EXIT_FAILED


def _draw(tessellations, path: str):
    if len(tessellations) == 2:
        hedonic_pair_svg(tessellations[0], tessellations[1], path)
    else:
        tessellation_svg(tessellations[0], path)


def cmd_check(config: RunConfig) -> int:
    verdict = SolverRouter(_monitor(config)).check(config)
    print(json.dumps({
        "verdict": "nested" if verdict.nested else "not nested",
        "violation_count": verdict.violation_count,
        "present_labels": verdict.present_labels,
    }, indent=2))
    return EXIT_OK


def cmd_certify(config: RunConfig) -> int:
    if config.energy_weight != 1.0:
        logger.error("The a-priori certificate is stated for the unweighted entropy")
        return EXIT_INVALID
    density, cost, targets = build_congestion(config)
    certificate = certify_nested_apriori(density, cost, targets, samples=config.k_samples)
    frame = certificate_to_frame(certificate)
    if config.report_csv:
        frame_to_csv(frame, config.report_csv)
    else:
        print(frame.to_csv(index=False), end="")
    print("guaranteed nested" if certificate.guaranteed_nested else "not guaranteed")
    return EXIT_OK


def cmd_sweep(config: RunConfig, args: argparse.Namespace) -> int:
    frame, evaluations = sweep_error_curve(config, _c_grid(args))
    if config.curve_csv:
        frame_to_csv(frame, config.curve_csv)
    else:
        print(frame.to_csv(index=False), end="")
    if config.svg:
        error_curve_svg(evaluations, config.svg)
    return EXIT_OK


def cmd_plot(config: RunConfig, args: argparse.Namespace) -> int:
    if not config.svg and not args.curve_svg:
        raise ValueError("plot needs --svg and/or --curve-svg")
    status = EXIT_OK
    if config.svg:
        solved = SolverRouter(_monitor(config)).run(config)
        tessellations = solved.tessellations()
        if not tessellations:
            logger.warning(f"[plot] nothing to draw: {solved.report.message}")
            return EXIT_FAILED
        _draw(tessellations, config.svg)
        status = EXIT_OK if solved.report.succeeded else EXIT_FAILED
    if args.curve_svg:
        _, evaluations = sweep_error_curve(config, _c_grid(args))
        error_curve_svg(evaluations, args.curve_svg)
    return status


def cmd_benchmark(config: BenchmarkConfig) -> int:
    frame = run_benchmark(config)
    if not config.output:
        print(frame.to_csv(index=False), end="")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO)

    if args.command == "schema":
        model = BenchmarkConfig if args.benchmark else RunConfig
        print(json.dumps(model.model_json_schema(), indent=2))
        return EXIT_OK

    try:
        if args.command == "benchmark":
            bench = load_benchmark_config(args)
        else:
            config = load_run_config(args)
    except ValidationError as e:
        print(f"Invalid configuration:\n{e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, ValueError) as e:
        print(f"Invalid configuration: {e}", file=sys.stderr)
        return EXIT_INVALID

    try:
        if args.command == "benchmark":
            return cmd_benchmark(bench)
        if args.command == "solve":
            return cmd_solve(config)
        if args.command == "check":
            return cmd_check(config)
        if args.command == "certify":
            return cmd_certify(config)
        if args.command == "sweep":
            return cmd_sweep(config, args)
        if args.command == "plot":
            return cmd_plot(config, args)
    except ValueError as e:
        logger.error(f"[{args.command}] {e}")
        return EXIT_FAILED
    return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
