import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import argparse
import asyncio
import logging
from typing import Awaitable, Callable, Dict, List, Optional

from cli.handlers.common import EXIT_CONFIG, EXIT_NUMERICAL
from cli.handlers.converge import converge_handler
from cli.handlers.curve import curve_handler
from cli.handlers.oracle_check import oracle_check_handler
from cli.handlers.solve import solve_handler
from config.config import configure_logging
from numerics.errors import ConfigError, RateDistortionError, ValidationError

logger = logging.getLogger(__name__)

Handler = Callable[[argparse.Namespace], Awaitable[int]]

HANDLERS: Dict[str, Handler] = {
    "solve": solve_handler,
    "converge": converge_handler,
    "curve": curve_handler,
    "oracle-check": oracle_check_handler,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdsolve",
        description="Rate-distortion functions of continuous sources on refined reproduction grids.",
    )
    parser.add_argument("--log-level", default=None, help="Overrides RD_LOG_LEVEL")
    parser.add_argument("--log-file", default=None, help="Overrides RD_LOG_FILE")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name: str, help_text: str) -> argparse.ArgumentParser:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="Run config (YAML, dotted keys)")
        cmd.add_argument("--out", default=None, help="Output directory; defaults to output_path from the config")
        cmd.add_argument("--workers", type=int, default=None, help="Threads for independent solves (RD_WORKERS)")
        return cmd

    with_config("solve", "Solve one configured problem and write solution.csv")
    converge = with_config("converge", "Grid-refinement study, writes ladder.csv")
    converge.add_argument("--n-list", default=None, help="Ladder grid sizes, e.g. 20,40,80,160")
    converge.add_argument("--ref-n", type=int, default=None, help="Reference grid size (>= 4 * max n)")
    curve = with_config("curve", "Sweep D or beta, writes curve.csv")
    curve.add_argument("--d-list", default=None, help="Distortion targets, e.g. 0.1,0.25,0.5")
    curve.add_argument("--beta-list", default=None, help="Multipliers, e.g. 0.1,0.2")
    sub.add_parser("oracle-check", help="Run the built-in oracle suite")
    return parser


async def dispatch(args: argparse.Namespace) -> int:
    """
    Run the handler for args.command and map failures to exit codes.

    Returns:
        int: 0 on success, 1 for failed oracle checks, 2 for config or
            validation errors, 3 for numerical failures and non-convergence.
    """
    handler = HANDLERS[args.command]
    try:
        return await handler(args)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as e:
        logger.error(f"Invalid input: {e}", exc_info=True)
        print(str(e), file=sys.stderr)
        return EXIT_CONFIG
    except RateDistortionError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(str(e), file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_file)
    return asyncio.run(dispatch(args))


if __name__ == "__main__":
    sys.exit(main())
