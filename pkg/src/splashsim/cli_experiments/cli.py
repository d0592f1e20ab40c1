"""Command-line entry point: ``splashsim {simulate,splash-search,stability,verify}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .commands import EXIT_SOLVER, EXIT_VALIDATION, cmd_simulate, cmd_splash_search, cmd_stability, cmd_verify
from .config import PRESETS, ConfigError, apply_override, load_config, validate

COMMANDS = {
    "simulate": cmd_simulate,
    "splash-search": cmd_splash_search,
    "stability": cmd_stability,
    "verify": cmd_verify,
}

DEFAULT_SOURCE = {"simulate": "splash", "splash-search": "splash", "stability": "stability", "verify": "splash"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splashsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help=f"YAML/JSON file or preset name ({', '.join(PRESETS)})")
        p.add_argument("--out", metavar="DIR", help="output directory (default: output.dir of the config)")
        p.add_argument("--seed", type=int, help="random seed recorded in the config")
        p.add_argument("--override", metavar="KEY=VALUE", action="append", default=[], help="dotted config key, repeatable")
        if name == "verify":
            p.add_argument("--only", action="append", help="run only the named check (repeatable)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config or DEFAULT_SOURCE[args.command], args.override)
        if args.seed is not None:
            apply_override(cfg, f"seed={args.seed}")
            validate(cfg)
    except ConfigError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = Path(args.out or cfg["output"]["dir"])
    try:
        if args.command == "verify":
            return cmd_verify(cfg, out, args.only)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
