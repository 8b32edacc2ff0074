import argparse
import asyncio
import logging

from cli.handlers.common import EXIT_CHECK_FAILED, EXIT_OK
from services.oracle_suite import GPrimeFn, all_passed, format_table, run_oracle_suite
from solvers.cba import eval_G_prime

logger = logging.getLogger(__name__)


async def oracle_check_handler(args: argparse.Namespace, g_prime: GPrimeFn = eval_G_prime) -> int:
    """Run the built-in oracle suite and print a pass/fail table. Needs no config."""
    results = await asyncio.to_thread(run_oracle_suite, g_prime)
    print(format_table(results))
    if all_passed(results):
        logger.info(f"All {len(results)} oracle checks passed")
        return EXIT_OK
    failed = [r.name for r in results if not r.passed]
    logger.warning(f"Oracle checks failed: {', '.join(failed)}")
    return EXIT_CHECK_FAILED
