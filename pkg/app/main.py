from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any

from app.artifacts import resolve_output_root
from app.config import ConfigError, load_config
from app.errors import SimulationError
from app.experiments import SUBCOMMANDS, RunInputs, run
from app.parsers import AssignmentError, parse_assignments
from app.versioning import get_app_version

PROJECT_ROOT = Path(__file__).resolve().parent.parent
APP_VERSION = get_app_version()
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# dedicated flags and the config keys they override
FLAG_KEYS = {
    "name": "experiment",
    "bc": "evolution.boundary",
    "alpha": "state.alpha",
    "dt": "evolution.dt",
    "T": "evolution.T",
    "seed": "state.seed",
    "basis": "spectral.basis",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML config (default: config.yaml, else config.numerics.yaml)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a dotted config key")
    common.add_argument("--output-dir", default=None, help="artifact root (overrides $DECAY_LAB_OUTPUT_ROOT and output_dir)")
    common.add_argument("--name", default=None, help="experiment name")
    common.add_argument("--bc", choices=["hardwall", "hard_wall", "cap"], default=None)
    common.add_argument("--alpha", type=float, default=None, help="coherent amplitude |alpha|")
    common.add_argument("--dt", type=float, default=None)
    common.add_argument("--T", type=float, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--basis", choices=["cap", "wkb"], default=None)
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(description="Resonant-state tunneling lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name, parents=[common])
        if name == "compare":
            sub.add_argument("--a", type=Path, default=None, help="first current CSV")
            sub.add_argument("--b", type=Path, default=None, help="second current CSV")
    return parser


def collect_overrides(args: argparse.Namespace) -> dict[str, Any]:
    overrides = parse_assignments(args.set)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return overrides


def configure_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = load_config(PROJECT_ROOT, path=args.config, overrides=collect_overrides(args))
        output_root = resolve_output_root(args.output_dir, config.output_dir)
        inputs = RunInputs(compare_a=getattr(args, "a", None), compare_b=getattr(args, "b", None))
        directory = run(config, args.subcommand, output_root, inputs)
    except (ConfigError, AssignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(directory)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
