"""
Command-line entry point.

    python main_har.py <command> [--config PATH] [--seed N] [--out DIR] [key=value ...]

Exit codes: 0 success, 2 configuration error, 3 invariant violation.
"""
import argparse
import logging
import sys
from typing import List, Optional

import torch

from base.command_registry import default_commands
from base.errors import ConfigError, HarError, InvariantViolation
from base.run_config import load_run_config
from config.settings import HAR_THREADS

logging.basicConfig(level=logging.WARNING)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def build_parser() -> argparse.ArgumentParser:
    registry = default_commands()
    parser = argparse.ArgumentParser(prog="har", description="Self-supervised activity recognition toolkit")
    parser.add_argument("command", choices=registry.names())
    parser.add_argument("overrides", nargs="*", metavar="key=value", help="dotted config overrides, e.g. net=tiny")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="run seed (defaults to HAR_SEED)")
    parser.add_argument("--out", help="output directory (defaults to HAR_OUTPUT_DIR)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(HAR_THREADS)
    try:
        cfg = load_run_config(args.config, args.overrides, args.seed, args.out)
        outputs = default_commands().execute(args.command, cfg)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except InvariantViolation as e:
        logger.error(f"Invariant violated: {e}")
        return EXIT_INVARIANT
    except HarError as e:
        # data, shape and label problems are reported as violated invariants
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_INVARIANT
    for name, path in outputs.items():
        print(f"{name}\t{path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
