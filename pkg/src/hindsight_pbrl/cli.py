"""Command-line entry point.

Subcommands cover the individual pipeline stages, the whole pipeline, and
the experiment recipes. Exit codes: 0 success, 1 configuration error,
2 runtime error, 3 acceptance-check failure (exp-gambling --check).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, parse_config_file, parse_set_overrides
from .experiments import check_gambling, exp_gambling, exp_mismatch, sweep
from .pipeline import StageError, run_pipeline, run_stage

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3

STAGE_COMMANDS = {
    "gen-data": "gen-data",
    "train-vae": "train-vae",
    "train-reward": "train-reward",
    "label": "label",
    "train-rl": "train-rl",
    "eval": "eval",
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="path to a section.key = value config file")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--out", type=Path, default=Path("runs/out"),
                        help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="section.key=value", help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpbrl",
        description="Offline preference-based RL with future-conditioned rewards")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        _add_common(p)

    p = sub.add_parser("pipeline", help="run every stage for the configured method")
    _add_common(p)

    p = sub.add_parser("exp-gambling", help="gambling credit-assignment study")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=100, help="number of trials")
    p.add_argument("--check", action="store_true",
                   help="exit 3 unless acceptance thresholds hold")

    p = sub.add_parser("exp-mismatch", help="preference/unlabeled mismatch study")
    _add_common(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--methods", default="oracle,mr,hpl",
                   help="comma-separated methods")

    p = sub.add_parser("sweep", help="sweep one axis over values")
    _add_common(p)
    p.add_argument("--axis", required=True,
                   choices=["k", "pref_size", "unlabeled_size", "N"])
    p.add_argument("--values", required=True,
                   help="comma-separated values for the axis")
    p.add_argument("--seeds", type=int, default=3)

    return parser


def _resolve_config(args) -> tuple[ExperimentConfig, int]:
    config = (parse_config_file(args.config) if args.config
              else ExperimentConfig({}))
    overrides = parse_set_overrides(args.overrides)
    if overrides:
        config = config.with_overrides(overrides)
    seed = args.seed if args.seed is not None else config["run.seed"]
    return config, seed


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in STAGE_COMMANDS:
            config, seed = _resolve_config(args)
            run_stage(args.command, config, args.out, seed)
            return EXIT_OK
        if args.command == "pipeline":
            config, seed = _resolve_config(args)
            run_pipeline(config, args.out, seed)
            return EXIT_OK
        if args.command == "exp-gambling":
            _, seed = _resolve_config(args)
            summary = exp_gambling(args.seeds, args.out, master_seed=seed,
                                   overrides=parse_set_overrides(args.overrides))
            print_summary(summary)
            if args.check:
                ok, problems = check_gambling(summary)
                for p in problems:
                    print(f"check failed: {p}", file=sys.stderr)
                return EXIT_OK if ok else EXIT_CHECK
            return EXIT_OK
        if args.command == "exp-mismatch":
            _, seed = _resolve_config(args)
            methods = [m.strip() for m in args.methods.split(",") if m.strip()]
            summary = exp_mismatch(methods, args.seeds, args.out, master_seed=seed,
                                   overrides=parse_set_overrides(args.overrides))
            print_summary(summary)
            return EXIT_OK
        if args.command == "sweep":
            _, seed = _resolve_config(args)
            values = [_parse_number(v) for v in args.values.split(",") if v.strip()]
            sweep(args.axis, values, args.seeds, args.out, master_seed=seed,
                  overrides=parse_set_overrides(args.overrides))
            return EXIT_OK
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"runtime error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def print_summary(summary: dict) -> None:
    import json

    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    sys.exit(main())
