#!/usr/bin/env python3
"""
MF Massive MIMO Simulator - Main Entry Point

Runs matched-filter downlink experiments for distributed massive MU-MIMO:
finite-K expected SINR against its large-system limit, error and SINR CDFs
over random drops, and the average squared eigenvalue table of the transmit
correlation.

Usage:
    python main.py configs/convergence.env                 # Run an experiment
    python main.py configs/error_cdf.env --n-drops 50      # Override file values
    python main.py configs/sinr_cdf.env --experiment single_user_cdf
    python main.py configs/lambda_table.env --config-check # Validate only
    python main.py configs/sinr_cdf.env --dump samples/    # Export a drop, R_t and G
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

from loguru import logger

# Add the src directory to the Python path
sys.path.insert(0, str(Path(__file__).parent / 'src'))

from src.config import Config, ExperimentConfig
from src.errors import InvalidConfigError, ModelError
from src.harness import ExperimentRunner

EXIT_OK = 0
EXIT_MODEL_ERROR = 1
EXIT_USAGE = 2


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None):
    """Set up logging configuration."""
    # Remove default logger
    logger.remove()

    # Add console logger
    logger.add(
        sys.stderr,
        format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
        level=level or Config.LOG_LEVEL
    )

    # Add file logger; an empty directory disables it
    log_dir = Config.LOG_DIR if log_dir is None else log_dir
    if not log_dir:
        return
    log_path = Path(log_dir)
    log_path.mkdir(parents=True, exist_ok=True)

    logger.add(
        log_path / "massim.log",
        rotation="100 MB",
        retention="30 days",
        format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
        level="DEBUG"
    )


def check_dependencies() -> bool:
    """Check if all required dependencies are installed."""
    try:
        import numpy  # noqa: F401
        import scipy  # noqa: F401
        import pandas  # noqa: F401
        import dotenv  # noqa: F401
        logger.info("All dependencies are installed")
        return True
    except ImportError as e:
        logger.error(f"Missing dependency: {e}")
        logger.error("Please run: pip install -r requirements.txt")
        return False


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='massim',
        description="MF Massive MIMO Simulator - matched-filter downlink SINR experiments",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    parser.add_argument('config', help='Experiment file with flat key=value pairs')
    parser.add_argument('--experiment', choices=Config.EXPERIMENTS, help='Override the experiment')
    parser.add_argument('--seed', type=int, help='Override the master seed')
    parser.add_argument('--n-drops', type=int, help='Override the number of random drops')
    parser.add_argument('--output', help='Override the CSV output path')
    parser.add_argument('--threads', type=int, help='Worker processes (0 = one per CPU)')
    parser.add_argument('--debug', action='store_true', help='Enable debug logging')
    parser.add_argument('--config-check', action='store_true', help='Only validate the configuration and exit')
    parser.add_argument('--dump', metavar='DIR', help='Export one drop, its R_t and a channel draw as CSV, then exit')
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {
        'experiment': args.experiment,
        'seed': args.seed,
        'n_drops': args.n_drops,
        'output_path': args.output,
        'threads': args.threads,
    }


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one experiment and return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    setup_logging('DEBUG' if args.debug else None)

    try:
        config = ExperimentConfig.from_file(args.config, _overrides(args))
    except InvalidConfigError as e:
        print(f"massim: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"massim: cannot read {args.config}: {e}", file=sys.stderr)
        return EXIT_USAGE

    if args.config_check:
        print(f"{args.config}: configuration is valid ({config.experiment})")
        return EXIT_OK

    try:
        runner = ExperimentRunner(config)
        if args.dump:
            for path in runner.export_samples(args.dump):
                print(path)
            return EXIT_OK
        summary = runner.run()
    except InvalidConfigError as e:
        print(f"massim: invalid configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as e:
        print(f"massim: model error: {e}", file=sys.stderr)
        print(f"massim: parameters: {config.to_dict()}", file=sys.stderr)
        return EXIT_MODEL_ERROR
    except KeyboardInterrupt:
        logger.info("Operation cancelled by user")
        return EXIT_MODEL_ERROR
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return EXIT_MODEL_ERROR

    print(summary.line())
    return EXIT_OK


def main():
    """Main entry point."""
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
