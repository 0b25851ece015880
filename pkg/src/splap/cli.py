"""Command line front end.

Usage:  splap <subcommand> [--config PATH] [--seed N] [--out PATH]

Subcommands match the experiment names (verify-law, explicit, converge,
sample-noise, selftest).  Configuration is read from the optional file
(`key = value` lines, `#` comments); the subcommand fixes the experiment and
--seed / --out override the corresponding keys.  The worker count is taken
from the SPLAP_WORKERS environment variable and never changes results.
"""

from __future__ import annotations

import argparse
import sys

from .config import (EXPERIMENTS, ConfigError, ExperimentConfig, parse_config,
                     validate, with_overrides)
from .experiments import ExperimentError, run_experiment


def build_parser():
    parser = argparse.ArgumentParser(
        prog="splap",
        description="numerical experiments for averaged discretizations of "
                    "the stochastic p-Laplace system")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="path to a key = value config file")
        cmd.add_argument("--seed", type=int, help="override master_seed")
        cmd.add_argument("--out", help="override the output CSV path")
    return parser


def load_config(args) -> ExperimentConfig:
    if args.config:
        with open(args.config, encoding="utf-8") as handle:
            text = handle.read()
        if "experiment" not in text:
            text = f"experiment = {args.experiment}\n" + text
        cfg = parse_config(text)
        if cfg.experiment != args.experiment:
            raise ConfigError(
                f"config file requests {cfg.experiment!r}, "
                f"command line requests {args.experiment!r}")
    else:
        cfg = ExperimentConfig(experiment=args.experiment)
        validate(cfg)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        cfg = with_overrides(cfg, **overrides)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        rows = run_experiment(cfg)
    except (ConfigError, ExperimentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if rows:
        where = cfg.out if cfg.out else "(not written, no --out given)"
        print(f"{len(rows)} rows -> {where}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
