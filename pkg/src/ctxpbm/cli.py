"""Command-line entry point: ``ctxpbm {generate,estimate,ltr,sweep}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiment import (ConfigError, ExperimentConfig, cmd_estimate, cmd_generate, cmd_ltr,
                         cmd_sweep, load_config)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxpbm", description="Contextual position-bias estimation lab")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [("generate", "collect click logs for every grid cell"),
                       ("estimate", "fit estimators on existing logs"),
                       ("ltr", "online learning to rank with fitted propensities"),
                       ("sweep", "generate + estimate + ltr, resumable via manifest.json")]:
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="JSON or YAML experiment config (defaults if omitted)")
        s.add_argument("--out", help="output directory (overrides config)")
        s.add_argument("--workers", type=int, help="parallel grid cells (overrides config)")
        s.add_argument("--seed", type=int, help="master seed (overrides config)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.master_seed = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        config.workers = args.workers
    if args.out is not None:
        config.output_dir = args.out
    return config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = resolve_config(args)
    except (ConfigError, OSError, ValueError, TypeError) as exc:
        print(f"ctxpbm: config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "generate":
        cmd_generate(config)
    elif args.command == "estimate":
        cmd_estimate(config)
    elif args.command == "ltr":
        cmd_ltr(config)
    else:
        manifest = cmd_sweep(config)
        failed = {k: v["error"] for k, v in manifest["cells"].items() if v["status"] != "done"}
        if failed:
            print(json.dumps({"failed": failed}, indent=1), file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
