#!/usr/bin/env python3
"""
Command-line interface for Aeolus: simulate flights, train the airflow
networks, run odometry and evaluate drift.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
import argparse
import logging
import sys
from typing import List, Optional

from src.config import settings
from src.models import AeolusError, NetworkKind

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_UNEXPECTED = 3


class UsageParser(argparse.ArgumentParser):
    """ArgumentParser that exits with the usage code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(prog="aeolus", description="Airflow-inertial odometry toolkit")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
                        default=settings.LOG_LEVEL.value, help="Set the logging level")
    parser.add_argument("--config", default=None, help="TOML run configuration (defaults when omitted)")
    sub = parser.add_subparsers(dest="command", parser_class=UsageParser)
    sub.required = True

    simulate = sub.add_parser("simulate", help="Generate synthetic flight sessions")
    simulate.add_argument("--seed", type=int, default=None, help="Seed of the first session")
    simulate.add_argument("--sessions", type=int, default=None, help="Number of sessions to write")
    simulate.add_argument("--out", default=None, help="Output directory (paths.data_dir by default)")

    train = sub.add_parser("train", help="Train one network")
    train.add_argument("which", choices=[k.value for k in NetworkKind], help="Network to train")
    train.add_argument("--data", default=None, help="Directory of session files (paths.data_dir by default)")
    train.add_argument("--seed", type=int, default=None, help="Training seed")
    train.add_argument("--out", default=None, help="Weights file (paths.weights_dir/<which>.json by default)")

    estimate = sub.add_parser("estimate", help="Run odometry on a dataset")
    estimate.add_argument("dataset", help="Flight-log CSV")
    estimate.add_argument("--weights-velocity", default=None, help="Velocity network weights")
    estimate.add_argument("--weights-acceleration", default=None, help="Acceleration network weights")
    estimate.add_argument("--weights-status", default=None, help="Status network weights")
    estimate.add_argument("--gains", default=None, help="TOML file with observer gains")
    estimate.add_argument("--no-networks", action="store_true",
                          help="Oracle mode: ground truth replaces the network outputs")
    estimate.add_argument("--out", default=None, help="Output directory (paths.output_dir by default)")

    evaluate = sub.add_parser("evaluate", help="Evaluate an estimates file against a dataset")
    evaluate.add_argument("estimates", help="estimates.csv from the estimate command")
    evaluate.add_argument("dataset", help="Flight-log CSV with ground truth")
    evaluate.add_argument("--out", default=None, help="Directory for report.json")
    return parser


def dispatch(args: argparse.Namespace) -> None:
    from src import main as commands
    from src.flightlog import load_run_config

    config = load_run_config(args.config)
    if args.command == "simulate":
        written = commands.cmd_simulate(config, args.out or config.paths.data_dir, args.seed, args.sessions)
        for path, summary in written:
            print(f"{path}: {summary.json()}")
    elif args.command == "train":
        _, report = commands.cmd_train(
            NetworkKind(args.which), config, args.data or config.paths.data_dir, args.out, args.seed
        )
        for key, value in report.items():
            print(f"{key}: {value:.6g}")
    elif args.command == "estimate":
        metrics = commands.cmd_estimate(
            config,
            args.dataset,
            args.out or config.paths.output_dir,
            weights={
                NetworkKind.VELOCITY: args.weights_velocity,
                NetworkKind.ACCELERATION: args.weights_acceleration,
                NetworkKind.STATUS: args.weights_status,
            },
            gains_path=args.gains,
            no_networks=args.no_networks,
        )
        print(metrics.json(indent=2, sort_keys=True))
    elif args.command == "evaluate":
        metrics = commands.cmd_evaluate(config, args.estimates, args.dataset, args.out)
        print(metrics.json(indent=2, sort_keys=True))


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    from src.main import setup_logging

    setup_logging(args.log_level)
    try:
        dispatch(args)
    except AeolusError as e:
        logger.error(f"{e.code}: {e.message}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_UNEXPECTED
    return 0


if __name__ == "__main__":
    sys.exit(main())
