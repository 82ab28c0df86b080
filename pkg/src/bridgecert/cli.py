"""Command line front door: run scenarios, tabulate constants, list checks.

Verbs
-----
run <scenario.toml> [--out DIR] [--force]
    Solve the scenario's coupling, run its named checks, and write
    ``<out>/<name>/report.json`` plus one CSV per recorded diagnostic series.
    Exit 0 when every check passes, 1 on a check failure, 2 when the solver
    fails to converge, 64 on usage or parse errors.

table <lattice.toml>
    Print a CSV of fixed-point and log-Sobolev quantities over the parameter
    lattice (axes T, beta_mu, alpha_nu, L, C_mu).

list-checks
    Print the known check names with one-line descriptions.

The ``BRIDGECERT_THREADS`` environment variable caps internal worker pools.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy
import scipy

from . import __version__
from .reporting import dump_json, file_sha256, series_to_csv, to_jsonable, write_csv
from .scenarios import (
    CHECKS,
    RunContext,
    ScenarioError,
    check_descriptions,
    lattice_csv_lines,
    load_lattice,
    load_scenario,
)
from .validation import ConvergenceError

EXIT_PASS = 0
EXIT_CHECK_FAILURE = 1
EXIT_SOLVER_FAILURE = 2
EXIT_USAGE = 64


def _write_grid(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        raise ScenarioError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bridgecert", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a scenario file and write its report")
    run.add_argument("scenario", type=Path)
    run.add_argument("--out", type=Path, default=Path("out"))
    run.add_argument("--force", action="store_true",
                     help="overwrite an existing report directory")

    table = sub.add_parser("table", help="tabulate constants over a parameter lattice")
    table.add_argument("lattice", type=Path)

    sub.add_parser("list-checks", help="list known check names")
    return parser


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = args.out / scenario.name
    report_path = out_dir / "report.json"
    if report_path.exists() and not args.force:
        raise ScenarioError(
            f"{report_path} exists; pass --force to overwrite"
        )
    out_dir.mkdir(parents=True, exist_ok=True)

    t_start = time.perf_counter()
    timings = {}
    results = []
    ctx = RunContext(scenario)
    for entry in scenario.checks:
        cfg = dict(entry)
        name = cfg.pop("name")
        fn, _ = CHECKS[name]
        t0 = time.perf_counter()
        results.append(fn(ctx, cfg))
        timings[name] = round(time.perf_counter() - t0, 3)
    timings["total"] = round(time.perf_counter() - t_start, 3)

    overall = not any(r.failed for r in results)
    payload = {
        "name": scenario.name,
        "scenario": scenario.raw,
        "scenario_hash": file_sha256(args.scenario),
        "seed": scenario.seed,
        "versions": {
            "bridgecert": __version__,
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3])),
        },
        "tolerances": {r.name: r.tol for r in results},
        "checks": [to_jsonable(r) for r in results],
        "overall_pass": overall,
        "timings": timings,
    }
    report_path.write_text(dump_json(payload))

    for result in results:
        for label, series in result.series.items():
            series_to_csv(series, out_dir / f"{result.name}.{label}.csv")
        for label, (header, rows) in result.tables.items():
            path = out_dir / f"{result.name}.{label}.csv"
            write_csv(path, header, rows) if header else _write_grid(path, rows)

    for result in results:
        line = ", ".join(f"{k}={v:.3g}" for k, v in result.margins.items())
        print(f"[{result.status:>14}] {result.name}" + (f"  ({line})" if line else ""))
    print(f"report: {report_path}")
    return EXIT_PASS if overall else EXIT_CHECK_FAILURE


def _cmd_table(args) -> int:
    points = load_lattice(args.lattice)
    for line in lattice_csv_lines(points):
        print(line)
    return EXIT_PASS


def _cmd_list_checks() -> int:
    for name, desc in check_descriptions():
        print(f"{name:28s} {desc}")
    return EXIT_PASS


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb == "run":
            return _cmd_run(args)
        if args.verb == "table":
            return _cmd_table(args)
        return _cmd_list_checks()
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER_FAILURE


if __name__ == "__main__":
    sys.exit(main())
