import argparse
import asyncio
import logging

from cli.handlers.common import EXIT_NUMERICAL, EXIT_OK, base_manifest, output_dir, parse_float_list, worker_count
from config.run_config import load_run_config
from numerics.errors import ValidationError
from services.analysis import rd_curve
from services.utils import curve_frame, manifest_path, write_csv_atomic, write_manifest

logger = logging.getLogger(__name__)

CURVE_FILE = "curve.csv"


async def curve_handler(args: argparse.Namespace) -> int:
    """
    Trace R(D) over --d-list (constrained solver) or --beta-list (fixed beta).

    Writes curve.csv sorted by D. Returns 3 when any solve fails to converge or
    R increases with D by more than 1e-6.
    """
    config = load_run_config(args.config)
    d_list = parse_float_list(args.d_list, "--d-list")
    beta_list = parse_float_list(args.beta_list, "--beta-list")
    if (d_list is None) == (beta_list is None):
        raise ValidationError("curve needs exactly one of --d-list and --beta-list")
    mode = "cba_fixed_D" if d_list is not None else "ba_fixed_beta"
    values = d_list if d_list is not None else beta_list

    source = config.source_spec()
    quad = config.quadrature_for(source)
    grid = config.grid_for(source)
    result = await asyncio.to_thread(
        rd_curve,
        quad,
        grid,
        config.distortion_fn(),
        values,
        mode,
        config.solver_tolerances(),
        worker_count(args),
    )

    csv_path = write_csv_atomic(curve_frame(result.rows), output_dir(args, config) / CURVE_FILE)
    record = base_manifest("curve", config, args.config)
    record.update(
        {
            "mode": mode,
            "values": list(values),
            "n": grid.n,
            "m": quad.m,
            "monotone": result.monotone,
            "worst_increase": result.worst_increase,
        }
    )
    write_manifest(record, manifest_path(csv_path))

    if not all(row.converged for row in result.rows):
        logger.warning("At least one curve point did not converge")
        return EXIT_NUMERICAL
    if not result.monotone:
        logger.error(f"R(D) is not nonincreasing: worst increase {result.worst_increase:.3e}")
        return EXIT_NUMERICAL
    return EXIT_OK
