"""
Command-line front end.

Usage:
    mfcontrol analyze --config run.json [--strict]
    mfcontrol synthesize --config run.json --out results/synth
    mfcontrol repro [--case exp2-v1] [--seed 7] [--workers 4]

Exit codes: 0 on success, 2 on a negative verdict under --strict, 1 on any
error (malformed config, infeasible request, numeric failure).
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

from mfcontrol.cli_config import ReproTask, RunConfig, load_run_config
from mfcontrol.config import Settings
from mfcontrol.dependencies import get_config, get_report_service, get_task_service
from mfcontrol.errors import ConfigError, MfControlError
from mfcontrol.services.task_service import EXIT_FAILURE

logger = logging.getLogger(__name__)

COMMANDS = ("analyze", "synthesize", "exactctrl", "simulate", "wbsde", "repro")


class _ArgumentParser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags, which is reserved for --strict verdicts
    def error(self, message: str) -> NoReturn:
        raise ConfigError(f"invalid arguments: {message}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run configuration (JSON)")
    common.add_argument("--out", help="Output directory for report files")
    common.add_argument("--seed", type=_non_negative_int, help="Overrides the config seed")
    common.add_argument("--format", choices=("csv", "json"), help="Table format")
    common.add_argument("--workers", type=_positive_int, help="Threads for particle blocks")
    common.add_argument(
        "--strict", action="store_true", help="Exit 2 when the analysis verdict is negative"
    )

    parser = _ArgumentParser(
        prog="mfcontrol",
        description="Controllability toolkit for linear mean-field SDEs",
    )
    subcommands = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        sub = subcommands.add_parser(command, parents=[common])
        if command == "repro":
            sub.add_argument("--case", help="Catalog case identifier (default: all)")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        config = load_run_config(args.config)
    elif args.command == "repro":
        config = RunConfig(task=ReproTask())
    else:
        raise ConfigError(f"'{args.command}' needs --config")

    if args.command == "repro" and getattr(args, "case", None):
        config = config.model_copy(update={"task": ReproTask(case=args.case)})
    if config.task.kind != args.command:
        raise ConfigError(
            f"subcommand '{args.command}' does not match task kind '{config.task.kind}'"
        )
    return config


def _execute(args: argparse.Namespace, settings: Settings) -> int:
    config = _resolve_config(args)
    seed = args.seed if args.seed is not None else config.seed
    if seed is None:
        seed = settings.default_seed
    config = config.model_copy(update={"seed": seed})

    out_dir = Path(
        args.out or config.output.directory or Path(settings.output_dir) / args.command
    )
    table_format = args.format or config.output.format
    n_workers = args.workers or settings.n_workers

    report_service = get_report_service(out_dir, config.sha256(), table_format)
    task_service = get_task_service(report_service)
    outcome = task_service.run(config, seed=seed, n_workers=n_workers, strict=args.strict)

    for line in outcome.lines:
        print(line)
    for path in report_service.written:
        print(f"wrote {path}")
    return outcome.exit_code


def run_command(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, run one task and map the outcome to an exit code.

    Args:
        argv: Arguments without the program name (defaults to sys.argv[1:])

    Returns:
        0 on success, 2 for a negative verdict under --strict, 1 on errors
    """
    try:
        args = build_parser().parse_args(argv)
        return _execute(args, get_config())
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        for diagnostic in e.diagnostics:
            logger.error(f"  {diagnostic}")
    except MfControlError as e:
        logger.error(f"{type(e).__name__}: {e}")
    except Exception as e:
        logger.error(f"Error: {e}", exc_info=True)
    return EXIT_FAILURE


def main() -> None:
    """Main entry point for the mfcontrol command."""
    settings = get_config()
    logging.basicConfig(
        level=settings.log_level.upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    sys.exit(run_command())


if __name__ == "__main__":
    main()
