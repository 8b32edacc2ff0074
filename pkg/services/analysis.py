import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Literal, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from numerics.distortion import DistortionFn, assemble_kernel, objective_f
from numerics.errors import StudyError, ValidationError
from numerics.grids import GridMode, ReproductionGrid, default_grid, project_to_grid, spread_to_grid
from numerics.sources import Quadrature, QuadratureRule, SourceSpec, build_quadrature
from services.oracles import gaussian_rdf_oracle
from solvers.ba import BAConfig, RDSolution, solve_fixed_beta
from solvers.cba import CBAConfig, cba_solve

logger = logging.getLogger(__name__)

StudyMode = Literal["ba_fixed_beta", "cba_fixed_D"]

# Rows at or below this error are solver noise and are left out of the order fit
ERROR_FLOOR = 1e-13
SANDWICH_SLACK = 1e-9
MONOTONE_SLACK = 1e-6


@dataclass(frozen=True)
class SolverTolerances:
    objective: float = 1e-10
    kkt: float = 1e-6
    g: float = 1e-10
    max_iterations: int = 100_000
    beta_bracket: tuple = (1e-6, 64.0)
    ba_steps_per_beta: int = 1


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    h: float
    value: float
    error_vs_ref: float
    ratio_to_previous: Optional[float]
    distortion: float
    rate: float
    beta: float
    iterations: int
    converged: bool
    oracle_error: Optional[float] = None


@dataclass
class ConvergenceReport:
    """
    Error ladder of a grid-refinement study.

    value is f for fixed-beta studies and the rate R for fixed-D studies; the
    reference_n run stands in for the unknown optimum.
    """
    rows: List[ConvergenceRow]
    reference_n: int
    reference_value: float
    fitted_order: float
    order_defined: bool
    mode: StudyMode
    parameter: float
    grid_mode: str = "fixed_box"
    quadrature_rule: str = "midpoint"
    solutions: List[RDSolution] = field(default_factory=list, repr=False)

    def errors_decreasing(self) -> bool:
        errors = [row.error_vs_ref for row in self.rows]
        return all(b < a for a, b in zip(errors, errors[1:]))


class SupportSummary(NamedTuple):
    support_fraction: float
    cluster_count: int
    cluster_centers: np.ndarray


class CurveRow(NamedTuple):
    D: float
    rate: float
    beta: float
    converged: bool
    iterations: int


class CurveResult(NamedTuple):
    rows: List[CurveRow]
    monotone: bool
    worst_increase: float


def fit_order(errors: Sequence[float], hs: Sequence[float]) -> float:
    """
    Least-squares slope of log(error) against log(h).

    Raises:
        ValidationError: On mismatched lengths, fewer than two points or
            nonpositive entries.
    """
    errors = np.asarray(errors, dtype=np.float64)
    hs = np.asarray(hs, dtype=np.float64)
    if errors.shape != hs.shape or errors.ndim != 1 or errors.size < 2:
        raise ValidationError("fit_order needs two equally long sequences with at least two entries")
    if np.any(errors <= 0) or np.any(hs <= 0):
        raise ValidationError("fit_order needs positive errors and step sizes")
    slope, _ = np.polyfit(np.log(hs), np.log(errors), 1)
    return float(slope)


def _study_parameter(params: Mapping[str, float], mode: StudyMode) -> float:
    key = "beta" if mode == "ba_fixed_beta" else "D"
    if key not in params:
        raise ValidationError(f"Mode {mode} needs parameter '{key}', got {sorted(params)}")
    return float(params[key])


def make_solver(
    quad: Quadrature,
    dist: DistortionFn,
    mode: StudyMode,
    parameter: float,
    tolerances: SolverTolerances,
    initialization: Optional[np.ndarray] = None,
    max_iterations: Optional[int] = None,
) -> Callable[[ReproductionGrid], RDSolution]:
    """Bind the solver for a mode so it only needs a grid."""
    budget = max_iterations or tolerances.max_iterations
    if mode == "ba_fixed_beta":
        config = BAConfig(
            beta=parameter,
            max_iterations=budget,
            objective_tolerance=tolerances.objective,
            kkt_tolerance=tolerances.kkt,
            initialization=initialization,
        )
        return lambda grid: solve_fixed_beta(quad, grid, dist, config)
    if mode == "cba_fixed_D":
        cfg = CBAConfig(
            distortion_target=parameter,
            beta_bracket=tuple(tolerances.beta_bracket),
            g_tolerance=tolerances.g,
            outer_tolerance=tolerances.objective,
            max_outer_iterations=budget,
            kkt_tolerance=tolerances.kkt,
            initialization=initialization,
            ba_steps_per_beta=tolerances.ba_steps_per_beta,
        )
        return lambda grid: cba_solve(quad, grid, dist, cfg)
    raise ValidationError(f"Unknown study mode: {mode}")


def refined_budget(max_iterations: int, coarse_n: int, fine_n: int) -> int:
    """Iteration cap for a finer grid: the coarse cap times (fine_n / coarse_n)^2, never less."""
    return max_iterations * max(1, math.ceil((fine_n / coarse_n) ** 2))


def refine_solution(
    quad: Quadrature,
    dist: DistortionFn,
    mode: StudyMode,
    parameter: float,
    tolerances: SolverTolerances,
    coarse: RDSolution,
    grid: ReproductionGrid,
) -> RDSolution:
    """
    Solve on a finer grid, started from a coarse solution spread over it.

    Blahut-Arimoto needs roughly h^-2 iterations to settle the mass around each
    atom, so the iteration cap grows with (n_fine / n_coarse)^2.

    Raises:
        ValidationError: If the coarse solution carries no node coordinates.
    """
    if coarse.nodes is None:
        raise ValidationError("Refinement needs a coarse solution with node coordinates")
    start = spread_to_grid(coarse.nodes, coarse.r, grid)
    budget = refined_budget(tolerances.max_iterations, coarse.n, grid.n)
    logger.info(f"Refining n={coarse.n} -> n={grid.n} ({mode}, parameter={parameter}), iteration cap {budget}")
    solve = make_solver(quad, dist, mode, parameter, tolerances, initialization=start, max_iterations=budget)
    return solve(grid)


def _run_all(solve: Callable[[int], RDSolution], ns: Sequence[int], workers: int) -> List[RDSolution]:
    if workers <= 1:
        return [solve(n) for n in ns]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(solve, ns))


def _require_converged(ns: Sequence[int], solutions: Sequence[RDSolution]) -> None:
    for n, sol in zip(ns, solutions):
        if not sol.converged:
            logger.error(f"Solve at n={n} did not converge after {sol.iterations} iterations")
            raise StudyError(f"Solve at n={n} did not converge (kkt residual {sol.kkt_residual:.3e})", n=n)


def convergence_study(
    source: SourceSpec,
    dist: DistortionFn,
    params: Mapping[str, float],
    n_list: Sequence[int],
    reference_n: int,
    mode: StudyMode,
    m: int = 300,
    rule: QuadratureRule = "midpoint",
    grid_mode: GridMode = "fixed_box",
    box_halfwidth: Optional[float] = None,
    tolerances: SolverTolerances = SolverTolerances(),
    workers: int = 1,
) -> ConvergenceReport:
    """
    Solve on a ladder of grids and measure the value error against a fine reference.

    The ladder solves are independent; the reference solve starts from the
    finest ladder solution (see refine_solution).

    Args:
        source: Source distribution.
        dist: Distortion measure.
        params: {'beta': ...} for ba_fixed_beta, {'D': ...} for cba_fixed_D.
        n_list: Grid sizes of the ladder.
        reference_n: Size of the reference grid, at least 4 * max(n_list).
        mode: 'ba_fixed_beta' or 'cba_fixed_D'.
        m, rule: Shared source quadrature.
        grid_mode, box_halfwidth: Grid family; the fixed box defaults to the source support.
        tolerances: Solver tolerances shared by every solve.
        workers: Threads used for the independent solves.

    Returns:
        ConvergenceReport: Rows ordered by n, with the fitted order of the
            error in h (NaN and order_defined=False with fewer than two usable rows).

    Raises:
        ValidationError: On an empty ladder or a reference grid that is too coarse.
        StudyError: If any solve fails to converge; names the grid size.
    """
    parameter = _study_parameter(params, mode)
    ns = sorted(int(n) for n in n_list)
    if not ns:
        raise ValidationError("n_list must not be empty")
    if reference_n < 4 * ns[-1]:
        raise ValidationError(f"reference_n={reference_n} must be at least 4 * max(n_list) = {4 * ns[-1]}")

    quad = build_quadrature(source, m, rule)
    solve = make_solver(quad, dist, mode, parameter, tolerances)
    grids = {n: default_grid(source, n, mode=grid_mode, M=box_halfwidth) for n in [*ns, reference_n]}
    logger.info(f"Convergence study ({mode}, parameter={parameter}): n={ns}, reference n={reference_n}")

    ladder = _run_all(lambda n: solve(grids[n]), ns, workers)
    _require_converged(ns, ladder)
    reference = refine_solution(quad, dist, mode, parameter, tolerances, ladder[-1], grids[reference_n])
    _require_converged([reference_n], [reference])
    solutions = [*ladder, reference]

    reference_value = _study_value(reference, mode)
    oracle = None
    if source.kind == "gaussian" and mode == "cba_fixed_D" and dist.kind == "squared_error":
        oracle = gaussian_rdf_oracle(source.variance(), parameter)

    rows: List[ConvergenceRow] = []
    previous_error: Optional[float] = None
    for n, sol in zip(ns, solutions[:-1]):
        value = _study_value(sol, mode)
        error = abs(value - reference_value)
        ratio = error / previous_error if previous_error else None
        rows.append(
            ConvergenceRow(
                n=n,
                h=grids[n].step,
                value=value,
                error_vs_ref=error,
                ratio_to_previous=ratio,
                distortion=sol.distortion,
                rate=sol.rate,
                beta=sol.beta,
                iterations=sol.iterations,
                converged=sol.converged,
                oracle_error=abs(sol.rate - oracle) if oracle is not None else None,
            )
        )
        previous_error = error

    usable = [row for row in rows if row.error_vs_ref > ERROR_FLOOR]
    if len(usable) >= 2:
        order = fit_order([row.error_vs_ref for row in usable], [row.h for row in usable])
        order_defined = True
    else:
        order, order_defined = math.nan, False
    logger.info(f"Fitted order {order:.4f} over {len(usable)} rows")

    return ConvergenceReport(
        rows=rows,
        reference_n=reference_n,
        reference_value=reference_value,
        fitted_order=order,
        order_defined=order_defined,
        mode=mode,
        parameter=parameter,
        grid_mode=grid_mode,
        quadrature_rule=rule,
        solutions=solutions,
    )


def _study_value(sol: RDSolution, mode: StudyMode) -> float:
    return sol.objective_f if mode == "ba_fixed_beta" else sol.rate


def rd_curve(
    quad: Quadrature,
    grid: ReproductionGrid,
    dist: DistortionFn,
    values: Sequence[float],
    mode: StudyMode,
    tolerances: SolverTolerances = SolverTolerances(),
    workers: int = 1,
) -> CurveResult:
    """
    Trace R(D) by sweeping D (cba_fixed_D) or beta (ba_fixed_beta).

    Rows come back sorted by D. monotone is False when R increases with D by
    more than 1e-6 anywhere.
    """
    if not values:
        raise ValidationError("Curve needs at least one D or beta value")
    solvers = [make_solver(quad, dist, mode, float(v), tolerances) for v in values]
    solutions = _run_all(lambda solve: solve(grid), solvers, workers)
    rows = sorted(
        (CurveRow(s.distortion if mode == "ba_fixed_beta" else float(v), s.rate, s.beta, s.converged, s.iterations)
         for v, s in zip(values, solutions)),
        key=lambda row: row.D,
    )
    increases = [b.rate - a.rate for a, b in zip(rows, rows[1:])]
    worst = max(increases, default=0.0)
    if worst > MONOTONE_SLACK:
        logger.warning(f"R(D) increased by {worst:.3e} between neighbouring points")
    return CurveResult(rows, worst <= MONOTONE_SLACK, worst)


def sandwich_check(
    coarse: RDSolution,
    fine: RDSolution,
    grid_coarse: ReproductionGrid,
    quad: Quadrature,
    dist: DistortionFn,
) -> bool:
    """
    Check f(fine) <= f(coarse) <= f(projection of fine onto the coarse grid), with 1e-9 slack.

    Raises:
        ValidationError: If the solutions use different beta or lack node coordinates.
        ProjectionError: If the fine solution has no mass inside the coarse box.
    """
    if coarse.nodes is None or fine.nodes is None:
        raise ValidationError("Sandwich check needs solutions with node coordinates")
    if coarse.beta != fine.beta:
        raise ValidationError(f"Sandwich check needs equal beta, got {coarse.beta} and {fine.beta}")
    if fine.n < 4 * coarse.n and fine.n != coarse.n:
        logger.warning(f"Fine grid n={fine.n} is less than 4x the coarse grid n={coarse.n}")

    projected = project_to_grid(fine.nodes, fine.r, grid_coarse)
    kernel = assemble_kernel(quad, grid_coarse, dist, coarse.beta)
    f_projected = objective_f(kernel, quad, projected)
    lower_ok = fine.objective_f - SANDWICH_SLACK <= coarse.objective_f
    upper_ok = coarse.objective_f <= f_projected + SANDWICH_SLACK
    logger.info(
        f"Sandwich n={fine.n} -> n={coarse.n}: f_fine={fine.objective_f:.12g}, "
        f"f_coarse={coarse.objective_f:.12g}, f_projected={f_projected:.12g}"
    )
    return lower_ok and upper_ok


def support_analysis(r: np.ndarray, grid: ReproductionGrid, mass_quantile: float = 0.99) -> SupportSummary:
    """
    Summarize how concentrated a reproduction distribution is.

    The smallest set of nodes holding at least mass_quantile of the mass is
    kept; clusters are maximal runs of adjacent kept nodes and their centers are
    mass-weighted means.
    """
    if not 0 < mass_quantile < 1:
        raise ValidationError(f"mass_quantile must be in (0, 1), got {mass_quantile}")
    r = np.asarray(r, dtype=np.float64)
    order = np.argsort(-r, kind="stable")
    cumulative = np.cumsum(r[order])
    count = int(np.searchsorted(cumulative, mass_quantile - 1e-12, side="left")) + 1
    count = min(count, r.size)
    kept = np.sort(order[:count])

    breaks = np.flatnonzero(np.diff(kept) > 1) + 1
    clusters = np.split(kept, breaks)
    centers = np.array([np.dot(r[c], grid.nodes[c]) / r[c].sum() for c in clusters])
    return SupportSummary(count / r.size, len(clusters), centers)
