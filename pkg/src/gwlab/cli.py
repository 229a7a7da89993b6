"""Command line entry point.

    gwlab run --config cfg.json --out results/ [--seed N] [--jobs K]
    gwlab verify <experiment> [--out DIR] [--seed N] [--jobs K] [--schedule N ...]
    gwlab config <experiment>

Exit status: 0 when every tolerance check passes, 2 when one fails, 1 on error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import GWLabError
from .experiments import EXPERIMENTS, default_config, load_config, run

log = logging.getLogger("gwlab")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default=None, help="directory for <experiment>.csv and summary.json")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for Monte Carlo screening")
    p.add_argument("--quiet", action="store_true", help="print nothing but errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwlab", description="Critical Galton-Watson small-deviation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment described by a JSON config")
    p_run.add_argument("--config", required=True, help="path to the experiment config (JSON)")
    _common(p_run)

    p_ver = sub.add_parser("verify", help="run an experiment with its default config")
    p_ver.add_argument("experiment", choices=EXPERIMENTS)
    p_ver.add_argument("--schedule", type=int, nargs="+", default=None, help="replace the default schedule")
    p_ver.add_argument("--option", action="append", default=[], metavar="KEY=JSON",
                       help="override one entry of the options block")
    _common(p_ver)

    p_cfg = sub.add_parser("config", help="print the default config of an experiment")
    p_cfg.add_argument("experiment", choices=EXPERIMENTS)
    return parser


def _parse_option(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise GWLabError(f"--option expects KEY=JSON, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "config":
            print(json.dumps(default_config(args.experiment), indent=2))
            return 0
        if args.command == "run":
            cfg = load_config(args.config, seed=args.seed)
        else:
            raw = default_config(args.experiment)
            if args.schedule:
                raw["schedule"] = args.schedule
            for item in args.option:
                k, v = _parse_option(item)
                raw.setdefault("options", {})[k] = v
            cfg = load_config(raw, seed=args.seed)
        report = run(cfg, out_dir=args.out, jobs=args.jobs)
    except GWLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if not args.quiet:
        print(report.format())
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
