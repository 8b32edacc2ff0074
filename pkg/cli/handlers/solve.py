import argparse
import asyncio
import logging

from cli.handlers.common import EXIT_NUMERICAL, EXIT_OK, base_manifest, output_dir
from config.run_config import load_run_config
from services.analysis import make_solver
from services.utils import manifest_path, solution_frame, write_csv_atomic, write_manifest

logger = logging.getLogger(__name__)

SOLUTION_FILE = "solution.csv"


async def solve_handler(args: argparse.Namespace) -> int:
    """
    Solve one configured problem and write solution.csv plus its manifest.

    Returns 0 when the solver converged and 3 otherwise.
    """
    config = load_run_config(args.config)
    source = config.source_spec()
    quad = config.quadrature_for(source)
    grid = config.grid_for(source)
    dist = config.distortion_fn()
    tolerances = config.solver_tolerances()
    solve = make_solver(quad, dist, config.mode, config.parameter, tolerances)

    sol = await asyncio.to_thread(solve, grid)

    csv_path = write_csv_atomic(solution_frame(grid.nodes, sol.r), output_dir(args, config) / SOLUTION_FILE)
    record = base_manifest("solve", config, args.config)
    record.update(
        {
            "n": grid.n,
            "m": quad.m,
            "h": grid.step,
            "grid_halfwidth": grid.halfwidth,
            "quadrature_raw_mass": quad.raw_mass,
            "converged": sol.converged,
            "status": sol.status,
            "iterations": sol.iterations,
            "f": sol.objective_f,
            "D": sol.distortion,
            "R": sol.rate,
            "raw_rate": sol.raw_rate,
            "beta": sol.beta,
            "kkt_residual": sol.kkt_residual,
        }
    )
    write_manifest(record, manifest_path(csv_path))

    if not sol.converged:
        logger.warning(f"Solve did not converge after {sol.iterations} iterations ({sol.status})")
        return EXIT_NUMERICAL
    logger.info(f"Solved {config.mode} at {config.parameter}: f={sol.objective_f:.15g}, R={sol.rate:.15g}")
    return EXIT_OK
