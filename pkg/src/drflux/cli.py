"""Command line entry point: ``drflux run|validate|catalog``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import DrfluxError
from .scenario import EXIT_ERROR, EXIT_OK, OUT_ENV, list_catalog, parse_scenario, run


def build_parser():
    parser = argparse.ArgumentParser(prog="drflux", description="Energy-flux experiments on rough velocity fields.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log pipeline progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write report.json plus CSV tables")
    p_run.add_argument("scenario", help="path to a scenario JSON file")
    p_run.add_argument("--deterministic", action="store_true", help="single worker, byte-identical CSV output")
    p_run.add_argument("--workers", type=int, default=1, metavar="N", help="worker threads (default 1)")
    p_run.add_argument("--out", metavar="DIR", help=f"output directory (default ${OUT_ENV} or ./drflux_out)")

    p_val = sub.add_parser("validate", help="check a scenario file without running it")
    p_val.add_argument("scenario")

    sub.add_parser("catalog", help="list fields, kernels and the scenario schema")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "catalog":
        sys.stdout.write(list_catalog())
        return EXIT_OK
    try:
        scenario = parse_scenario(args.scenario)
    except (DrfluxError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.command == "validate":
        print(f"ok: scenario {scenario.id!r} ({scenario.pipeline})")
        return EXIT_OK
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_ERROR
    result = run(scenario, out=args.out, workers=args.workers, deterministic=args.deterministic)
    stream = sys.stdout if result.exit_code == EXIT_OK else sys.stderr
    print(f"{result.report['status']}: {result.report['message']} -> {result.directory}", file=stream)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
