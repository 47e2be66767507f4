"""Command line entry point: ``lobscale <experiment> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .core import ConfigError, DegenerateError
from .experiments import EXPERIMENTS, resolve_config, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3

OUT_ENV = "LOBSCALE_OUT"


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lobscale", description="Run a built-in order book experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON file overriding the experiment defaults")
    p.add_argument("--seed", type=_u64, help="root seed (overrides the config)")
    p.add_argument("--replications", type=_positive, help="number of replications (overrides the config)")
    p.add_argument("--threads", type=_positive, default=1)
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./lobscale-out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = args.out or os.environ.get(OUT_ENV) or "lobscale-out"
    try:
        given = {}
        if args.config:
            with open(args.config) as fh:
                given = json.load(fh)
            if not isinstance(given, dict):
                raise ConfigError("config file must hold a JSON object")
        cfg = resolve_config(args.experiment, given, seed=args.seed, replications=args.replications)
        summary = run_experiment(args.experiment, cfg, out, args.threads)
    except (OSError, json.JSONDecodeError, ConfigError) as e:
        print(f"lobscale: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateError, FloatingPointError, ZeroDivisionError) as e:
        print(f"lobscale: numerical degeneracy: {e}", file=sys.stderr)
        return EXIT_DEGENERATE
    print(json.dumps({"experiment": args.experiment, "out": out, "keys": sorted(summary)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
