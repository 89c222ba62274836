"""wienerlab command line.

    wienerlab verify --config scenarios/gauss_channel.json --threads 4

Exit codes: 0 when every check passes, 1 when a check fails, 2 on a bad
scenario or flag, 3 when a computation collapses numerically.
"""

import argparse
import dataclasses
import logging
import sys
import traceback

import numpy as np

from . import _dist_info as di
from .errors import NumericalCollapseError, ScenarioError, WienerLabError
from .runner import SUBCOMMANDS, run_scenario
from .scenario import load_scenario

log = logging.getLogger("wienerlab")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_COLLAPSE = 3

_HELP = {
    "simulate": "Sample paths and write per-path quantities",
    "verify": "Run the identity checks against closed forms",
    "sweep": "Tabulate entropy, information and error quantities over lambda",
    "report": "Aggregate earlier outputs and write checksums",
}


def _seed(value: str) -> int:
    try:
        seed = int(value, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed '{value}'")
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError(f"seed {seed} is not an unsigned 64-bit integer")
    return seed


def _do_run(args: argparse.Namespace) -> int:
    config = load_scenario(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.threads < 1:
        raise ScenarioError(f"--threads must be positive, got {args.threads}")
    out_dir = config.output_dir(args.out)
    log.info(
        f"Running '{args.subcommand}' for scenario '{config.name}' "
        f"(seed={config.seed}, threads={args.threads}, out={out_dir})"
    )
    report = run_scenario(config, args.subcommand, out_dir, threads=args.threads)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def _fail(args: argparse.Namespace, message: str, code: int) -> int:
    print(f"ERROR: {message}", file=sys.stderr)
    if args.verbose:
        traceback.print_exc()
    return code


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    p = argparse.ArgumentParser(
        prog="wienerlab",
        usage="wienerlab {command} --config FILE ...",
        description="Numerical laboratory for shifted Wiener measures",
    )
    p.add_argument("--version", action="version", version=di.__version__)
    sub_p = p.add_subparsers(required=True, dest="subcommand")

    for name in SUBCOMMANDS:
        cmd_p = sub_p.add_parser(name, help=_HELP[name])
        cmd_p.add_argument("--config", required=True, help="Scenario file (JSON or TOML)")
        cmd_p.add_argument(
            "--seed", type=_seed, default=None, help="Override the scenario seed"
        )
        cmd_p.add_argument(
            "--threads",
            type=int,
            default=1,
            help="Worker threads (results do not depend on this)",
        )
        cmd_p.add_argument(
            "--out",
            default=None,
            help="Output directory (default: $WIENERLAB_OUTPUT_DIR, then the scenario's)",
        )
        cmd_p.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
        cmd_p.set_defaults(func=_do_run)

    try:
        args = p.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, which is also our config error code.
        return e.code if isinstance(e.code, int) else EXIT_CONFIG

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    try:
        return args.func(args)
    except ScenarioError as e:
        return _fail(args, f"Invalid scenario: {e}", EXIT_CONFIG)
    except (NumericalCollapseError, np.linalg.LinAlgError, FloatingPointError) as e:
        return _fail(args, f"Numerical collapse: {e}", EXIT_COLLAPSE)
    except WienerLabError as e:
        return _fail(args, str(e), EXIT_CHECK_FAILED)


if __name__ == "__main__":
    sys.exit(main())
