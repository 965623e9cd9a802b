"""Command line entry point: ``fedccfa run <config>`` and ``fedccfa plot <csv>... --series COL --out FILE``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import parse_config
from .data import ConfigurationError
from .experiment import EXIT_CONFIG, EXIT_OK, run_experiment
from .plot import emit_plot


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedccfa", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a key=value config file")
    run.add_argument("config")

    plot = sub.add_parser("plot", help="render metrics.csv columns as an SVG line chart")
    plot.add_argument("metrics", nargs="+")
    plot.add_argument("--series", required=True, help="column to plot against round")
    plot.add_argument("--out", required=True)
    plot.add_argument("--label", action="append", help="legend label per series (repeatable)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            config = parse_config(args.config)
        except (ConfigurationError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return run_experiment(config)

    try:
        emit_plot(args.metrics, args.series, args.out, args.label)
    except (KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
