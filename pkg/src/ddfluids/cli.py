"""Command-line entry point: ``dd-fluids <subcommand> [config] [--output-dir DIR] [--seed N]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config, validate
from .experiments import EXIT_ERROR, run

SUBCOMMANDS = {
    "solve": "run one data-driven solve",
    "study": "data-density or data-convergence refinement study",
    "gamma": "Gamma-convergence probe over noisy data levels",
    "hulls": "hull membership and separating-certificate suite",
    "verify": "cross-module invariant suite (no config needed)",
    "gen-data": "generate a material data set and save it as CSV",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dd-fluids", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        if name == "verify":
            p.add_argument("config", nargs="?", help="optional JSON config")
        else:
            p.add_argument("config", help="JSON run configuration")
        p.add_argument("--output-dir", help="override the config's output_dir")
        p.add_argument("--seed", type=int, help="override the config's seed")
    return parser


def _raw_config(args) -> dict:
    raw = load_config(args.config) if args.config else {}
    raw.setdefault("experiment", args.command)
    if args.output_dir is not None:
        raw["output_dir"] = args.output_dir
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = _raw_config(args)
        if raw.get("experiment") != args.command:
            raise ConfigError([f"experiment: config names {raw.get('experiment')!r}, command is {args.command!r}"])
        cfg = validate(raw)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        return run(cfg)
    except Exception as exc:
        logging.getLogger(__name__).debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
