import argparse
import asyncio
import logging

from cli.handlers.common import EXIT_NUMERICAL, EXIT_OK, base_manifest, output_dir, parse_int_list, worker_count
from config.run_config import load_run_config
from services.analysis import convergence_study
from services.utils import ladder_frame, manifest_path, write_csv_atomic, write_manifest

logger = logging.getLogger(__name__)

LADDER_FILE = "ladder.csv"
# Reference grid size relative to the finest ladder grid when --ref-n is not given
DEFAULT_REFERENCE_FACTOR = 8


async def converge_handler(args: argparse.Namespace) -> int:
    """Run a grid-refinement study and write ladder.csv; 0 iff every solve converged and errors decrease."""
    config = load_run_config(args.config)
    n_list = parse_int_list(args.n_list, "--n-list") or [config.grid.n]
    reference_n = args.ref_n or DEFAULT_REFERENCE_FACTOR * max(n_list)
    source = config.source_spec()
    params = {"beta" if config.mode == "ba_fixed_beta" else "D": config.parameter}

    report = await asyncio.to_thread(
        convergence_study,
        source,
        config.distortion_fn(),
        params,
        n_list,
        reference_n,
        config.mode,
        m=config.quadrature.m,
        rule=config.quadrature.rule,
        grid_mode=config.grid.mode,
        box_halfwidth=config.grid.M,
        tolerances=config.solver_tolerances(),
        workers=worker_count(args),
    )

    with_oracle = any(row.oracle_error is not None for row in report.rows)
    csv_path = write_csv_atomic(ladder_frame(report, with_oracle), output_dir(args, config) / LADDER_FILE)
    record = base_manifest("converge", config, args.config)
    record.update(
        {
            "n_list": sorted(n_list),
            "reference_n": report.reference_n,
            "reference_value": report.reference_value,
            "fitted_order": report.fitted_order if report.order_defined else None,
            "order_defined": report.order_defined,
            "converged": [row.converged for row in report.rows],
            "distortion": [row.distortion for row in report.rows],
            "rate": [row.rate for row in report.rows],
            "beta": [row.beta for row in report.rows],
            "iterations": [row.iterations for row in report.rows],
        }
    )
    write_manifest(record, manifest_path(csv_path))

    if not report.errors_decreasing():
        logger.warning(f"Ladder errors are not strictly decreasing: {[row.error_vs_ref for row in report.rows]}")
        return EXIT_NUMERICAL
    return EXIT_OK
