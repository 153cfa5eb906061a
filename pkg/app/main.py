"""Command-line entry point: ground states, propagation, optimization and benchmarks."""

import argparse
import json
import logging
import sys
from pathlib import Path

from app.config import settings
from app.exceptions import (
    ConfigurationError,
    ConvergenceError,
    DropletControlException,
    KernelError,
    NumericFaultError,
    ValidationError,
)
from app.schemas.run_config import MODES, RunConfig
from app.services import experiment_service

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper()),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC_FAULT = 3
EXIT_NOT_CONVERGED = 4

# Checked in order, so subclasses must precede their bases
EXIT_CODES = (
    (ConfigurationError, EXIT_CONFIG),
    (ValidationError, EXIT_CONFIG),
    (KernelError, EXIT_CONFIG),
    (NumericFaultError, EXIT_NUMERIC_FAULT),
    (ConvergenceError, EXIT_NOT_CONVERGED),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="droplet-control",
        description="Dipolar condensate simulation and optimal control of droplet formation",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration (defaults if omitted)")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument(
        "--fine", action="store_true", help="Use the fine cross-check grid and time step"
    )

    subcommands = parser.add_subparsers(dest="command", required=True)
    subcommands.add_parser("groundstate", parents=[common], help="Compute psi0 and psi_d")

    propagate = subcommands.add_parser("propagate", parents=[common], help="Propagate psi0")
    propagate.add_argument("--controls", default="linear", help="Controls file or 'linear'")
    propagate.add_argument("--states", type=Path, help="Directory holding the ground states")

    optimize = subcommands.add_parser("optimize", parents=[common], help="Optimize the controls")
    optimize.add_argument("--mode", choices=MODES, help="Optimization strategy")
    optimize.add_argument("--seed", type=int, help="Optimizer seed")
    optimize.add_argument("--states", type=Path, help="Directory holding the ground states")

    subcommands.add_parser("kernel-bench", parents=[common], help="Dipolar kernel accuracy sweep")

    perturb = subcommands.add_parser("perturb", parents=[common], help="Robustness run")
    perturb.add_argument("--controls", default="linear", help="Controls file or 'linear'")
    perturb.add_argument("--seed", type=int, help="Noise seed")
    perturb.add_argument("--states", type=Path, help="Directory holding the ground states")
    return parser


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.load(path)


def exit_code_for(error: Exception) -> int:
    for error_type, code in EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return EXIT_FAILURE


def dispatch(args: argparse.Namespace, config: RunConfig) -> dict:
    out_dir = args.out or Path(config.output_dir or settings.output_dir)
    if args.command == "groundstate":
        return experiment_service.run_groundstate(config, out_dir, fine=args.fine)
    if args.command == "propagate":
        return experiment_service.run_propagate(
            config, out_dir, controls=args.controls, states_dir=args.states, fine=args.fine
        )
    if args.command == "optimize":
        return experiment_service.run_optimize(
            config, out_dir, mode=args.mode, seed=args.seed, states_dir=args.states, fine=args.fine
        )
    if args.command == "kernel-bench":
        return experiment_service.run_kernel_bench(config, out_dir)
    if args.command == "perturb":
        return experiment_service.run_perturb(
            config,
            out_dir,
            controls=args.controls,
            states_dir=args.states,
            seed=args.seed,
            fine=args.fine,
        )
    raise ConfigurationError("Unknown command", detail=args.command)


def main(argv=None) -> int:
    """
    Run one subcommand and map failures to exit codes.

    Returns:
        0 on success, 2 for configuration errors, 3 for numeric faults,
        4 for non-convergence and 1 for anything else
    """
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        logger.info(f"Running {args.command}")
        summary = dispatch(args, config)
    except DropletControlException as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed: {e.message}")
        print(f"error: {e.message}", file=sys.stderr)
        if e.detail:
            print(f"detail: {e.detail}", file=sys.stderr)
        return code
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
