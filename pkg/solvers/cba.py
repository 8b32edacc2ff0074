import logging
import math
from dataclasses import dataclass
from typing import Literal, NamedTuple, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from config.config import PROGRESS_EVERY
from numerics.distortion import DistortionFn, assemble_kernel, check_distribution
from numerics.errors import NumericalError, SolverError, ValidationError
from numerics.grids import ReproductionGrid
from numerics.sources import Quadrature
from solvers.ba import (
    DESCENT_TOL,
    LogDomainSweep,
    RDSolution,
    advance,
    finalize_solution,
    initial_distribution,
)

logger = logging.getLogger(__name__)

BetaStatus = Literal["root", "rate_zero", "bracket_exceeded"]

# Below this |G'| a Newton step is not attempted
MIN_SLOPE = 1e-300
MAX_BRACKET_DOUBLINGS = 20


@dataclass(frozen=True)
class CBAConfig:
    """
    Settings for the distortion-targeting solver.

    Attributes:
        distortion_target: D > 0.
        beta_bracket: Initial (lo, hi) search bracket for the multiplier.
        g_tolerance: A multiplier is accepted once |G(beta)| <= g_tolerance.
        outer_tolerance: Stop once the objective change between outer iterations
            falls below this and the KKT residual is within kkt_tolerance.
        max_outer_iterations: Outer iteration cap.
        kkt_tolerance: KKT residual bound for convergence.
        initialization: None for uniform, else a strictly positive probability vector.
        ba_steps_per_beta: Blahut-Arimoto r-steps taken after each multiplier update.
        max_g_evaluations: Budget of G evaluations per multiplier search.
    """
    distortion_target: float
    beta_bracket: Tuple[float, float] = (1e-6, 64.0)
    g_tolerance: float = 1e-10
    outer_tolerance: float = 1e-10
    max_outer_iterations: int = 100_000
    kkt_tolerance: float = 1e-6
    initialization: Optional[np.ndarray] = None
    ba_steps_per_beta: int = 1
    max_g_evaluations: int = 200

    def __post_init__(self) -> None:
        lo, hi = self.beta_bracket
        if not (math.isfinite(self.distortion_target) and self.distortion_target > 0):
            raise ValidationError(f"Distortion target must be > 0, got {self.distortion_target}")
        if not (0 <= lo < hi and math.isfinite(hi)):
            raise ValidationError(f"beta bracket must satisfy 0 <= lo < hi, got {self.beta_bracket}")
        if not (self.g_tolerance > 0 and self.outer_tolerance > 0 and self.kkt_tolerance > 0):
            raise ValidationError("Tolerances must be > 0")
        if self.max_outer_iterations < 1 or self.ba_steps_per_beta < 1 or self.max_g_evaluations < 3:
            raise ValidationError("Iteration counts must be positive")
        if self.initialization is not None:
            init = np.asarray(self.initialization, dtype=np.float64)
            check_distribution(init, init.size)
            if np.any(init <= 0):
                raise ValidationError("Custom initialization must be strictly positive")


class GPrime(NamedTuple):
    value: float
    degenerate: bool


class BetaSearch(NamedTuple):
    beta: float
    status: BetaStatus
    g_value: float
    evaluations: int
    bracket: Tuple[float, float]


def _row_moments(rho: np.ndarray, r: np.ndarray, beta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row mean and variance of rho under w_ij ~ r_j e^{-beta rho_ij}, plus the support."""
    support = np.flatnonzero(r > 0)
    if support.size == 0:
        raise ValidationError("Reproduction weights have empty support")
    rho_s = rho[:, support]
    scores = np.log(r[support]) - beta * rho_s
    weights = np.exp(scores - logsumexp(scores, axis=1, keepdims=True))
    mean = np.sum(weights * rho_s, axis=1)
    centered = rho_s - mean[:, None]
    variance = np.sum(weights * centered * centered, axis=1)
    return mean, variance, support


def eval_G(quad: Quadrature, rho_entries: np.ndarray, r: np.ndarray, beta: float, D: float) -> float:
    """
    G(beta) = sum_i w_i E_i[rho] - D, the posterior distortion gap.

    G is nonincreasing in beta; its root is the multiplier matching distortion D
    for the given r.
    """
    r = check_distribution(r, rho_entries.shape[1])
    mean, _, _ = _row_moments(rho_entries, r, float(beta))
    return math.fsum(quad.weights * mean) - D


def eval_G_prime(quad: Quadrature, rho_entries: np.ndarray, r: np.ndarray, beta: float) -> GPrime:
    """
    dG/dbeta = -sum_i w_i Var_i(rho) <= 0.

    Returns:
        GPrime: (value, degenerate). When rho is constant on the support of r in
            every row the derivative is 0 and degenerate is True.
    """
    r = check_distribution(r, rho_entries.shape[1])
    mean, variance, support = _row_moments(rho_entries, r, float(beta))
    rho_s = rho_entries[:, support]
    active = quad.weights > 0
    if np.all(np.ptp(rho_s[active], axis=1) == 0):
        return GPrime(0.0, True)
    return GPrime(-math.fsum(quad.weights * variance), False)


def _g_and_slope(quad: Quadrature, rho: np.ndarray, r: np.ndarray, beta: float, D: float) -> Tuple[float, float]:
    mean, variance, _ = _row_moments(rho, r, beta)
    return math.fsum(quad.weights * mean) - D, -math.fsum(quad.weights * variance)


def solve_beta(
    quad: Quadrature,
    rho_entries: np.ndarray,
    r: np.ndarray,
    D: float,
    cfg: CBAConfig,
    beta_start: Optional[float] = None,
) -> BetaSearch:
    """
    Find the multiplier with G(beta) = 0 for fixed r.

    Newton steps on the monotone function G, each guarded by the sign-change
    bracket; a step that leaves the bracket (or meets a vanishing slope) is
    replaced by bisection. When G is already nonpositive at the lower end of
    the configured bracket, G(0) decides: a positive G(0) puts the root in
    [0, lo], otherwise the target is met at zero rate.

    Args:
        quad: Source quadrature.
        rho_entries: Cached rho matrix.
        r: Current reproduction weights.
        D: Distortion target.
        cfg: Solver settings (bracket, tolerance, evaluation budget).
        beta_start: Warm start, used when it lies inside the bracket.

    Returns:
        BetaSearch: status 'rate_zero' (beta = 0) when G(0) <= 0,
            'bracket_exceeded' when G stays positive after 20 doublings of hi,
            otherwise 'root'.
    """
    r = check_distribution(r, rho_entries.shape[1])
    lo, hi = (float(v) for v in cfg.beta_bracket)
    evaluations = 0

    g_lo, _ = _g_and_slope(quad, rho_entries, r, lo, D)
    evaluations += 1
    if g_lo <= 0:
        if lo > 0:
            g_zero, _ = _g_and_slope(quad, rho_entries, r, 0.0, D)
            evaluations += 1
            if g_zero > 0:
                logger.debug(f"G(lo={lo}) = {g_lo:.3e} <= 0 < G(0) = {g_zero:.3e}; searching [0, {lo}]")
                lo, hi, g_lo = 0.0, lo, g_zero
        if g_lo <= 0:
            logger.debug(f"G(0) = {g_lo:.3e} <= 0, target reachable at zero rate")
            return BetaSearch(0.0, "rate_zero", g_lo, evaluations, (lo, hi))
        g_hi = -math.inf
    else:
        g_hi, _ = _g_and_slope(quad, rho_entries, r, hi, D)
        evaluations += 1
    doublings = 0
    while g_hi > 0:
        if doublings >= MAX_BRACKET_DOUBLINGS:
            logger.warning(f"G still positive at beta={hi}; bracket exceeded")
            return BetaSearch(hi, "bracket_exceeded", g_hi, evaluations, (lo, hi))
        lo, g_lo = hi, g_hi
        hi *= 2.0
        g_hi, _ = _g_and_slope(quad, rho_entries, r, hi, D)
        evaluations += 1
        doublings += 1

    beta = beta_start if beta_start is not None and lo < beta_start < hi else 0.5 * (lo + hi)
    g = math.inf
    while evaluations < cfg.max_g_evaluations:
        g, slope = _g_and_slope(quad, rho_entries, r, beta, D)
        evaluations += 1
        if abs(g) <= cfg.g_tolerance:
            break
        if g > 0:
            lo = beta
        else:
            hi = beta
        if hi - lo <= 4.0 * np.finfo(float).eps * hi:
            logger.debug(f"Bracket collapsed at beta={beta!r} with |G|={abs(g):.3e}")
            break
        if slope < 0 and abs(slope) >= MIN_SLOPE:
            candidate = beta - g / slope
        else:
            candidate = math.nan
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        beta = candidate
    else:
        logger.warning(f"Multiplier search used {evaluations} evaluations, |G|={abs(g):.3e}")

    return BetaSearch(beta, "root", g, evaluations, (lo, hi))


def zero_rate_threshold(quad: Quadrature, rho_entries: np.ndarray) -> Tuple[float, int]:
    """
    Smallest distortion reachable at zero rate and the node achieving it.

    That is min_j sum_i w_i rho_ij, the distortion of the best constant
    reproduction.
    """
    per_node = quad.weights @ rho_entries
    j = int(np.argmin(per_node))
    return float(per_node[j]), j


def cba_solve(quad: Quadrature, grid: ReproductionGrid, dist: DistortionFn, cfg: CBAConfig) -> RDSolution:
    """
    Solve the distortion-constrained discrete problem.

    Each outer iteration re-solves the multiplier for the current r and then
    takes ba_steps_per_beta Blahut-Arimoto steps at that multiplier. When the
    target is at least the zero-rate threshold the answer is a point mass at
    the best constant reproduction with beta = 0 and rate 0.

    Args:
        quad: Source quadrature.
        grid: Reproduction grid.
        dist: Distortion measure.
        cfg: Solver settings.

    Returns:
        RDSolution: Final weights with the multiplier as beta; converged=False
            when the outer iteration cap is reached.

    Raises:
        SolverError: If the multiplier cannot be bracketed.
        NumericalError: On a descent violation inside a Blahut-Arimoto step.
    """
    D = float(cfg.distortion_target)
    kernel = assemble_kernel(quad, grid, dist, 0.0)
    rho = kernel.rho_entries
    logger.info(f"CBA solve: m={kernel.m}, n={kernel.n}, D={D}")

    d_zero, j_zero = zero_rate_threshold(quad, rho)
    if D >= d_zero:
        logger.info(f"D={D} >= zero-rate threshold {d_zero:.15g}; rate is 0")
        return _zero_rate_solution(kernel, quad, j_zero, grid)

    r = initial_distribution(kernel.n, cfg.initialization)
    sweep = LogDomainSweep(rho, quad, 0.0)
    beta: Optional[float] = None
    value_prev = math.inf
    change = math.inf
    kkt = math.inf
    history = []
    converged = False
    outer = 0

    while True:
        search = solve_beta(quad, rho, r, D, cfg, beta_start=beta)
        if search.status == "bracket_exceeded":
            raise SolverError(
                f"Could not bracket the multiplier for D={D}; reached {search.bracket}",
                bracket=search.bracket,
            )
        if search.status == "rate_zero":
            logger.warning(f"Multiplier search hit the zero-rate region at outer iteration {outer}")
            return _zero_rate_solution(kernel, quad, j_zero, grid)
        beta = search.beta
        sweep.beta = beta

        f = sweep.evaluate(r)
        log_c = sweep.log_column_sums()
        if change <= cfg.outer_tolerance and np.expm1(np.max(log_c)) <= cfg.kkt_tolerance:
            kkt = float(np.expm1(np.max(sweep.log_column_sums(full=True))))
            if kkt <= cfg.kkt_tolerance:
                converged = True
                break
        if outer >= cfg.max_outer_iterations:
            break

        for step in range(cfg.ba_steps_per_beta):
            if step:
                log_c = sweep.log_column_sums()
            r = advance(r, sweep.support, log_c)
            f_next = sweep.evaluate(r)
            if f_next > f + DESCENT_TOL:
                raise NumericalError(
                    f"Objective increased from {f!r} to {f_next!r} at outer iteration {outer + 1} (beta={beta})"
                )
            f = f_next

        value = f - beta * D
        change = abs(value - value_prev)
        value_prev = value
        history.append(value)
        outer += 1
        if outer % PROGRESS_EVERY == 0:
            logger.debug(
                f"CBA iteration {outer}: beta={beta:.12g}, value={value:.15g}, "
                f"change={change:.3e}, support={sweep.support.size}"
            )

    kernel = kernel.with_beta(beta)
    if converged:
        logger.info(f"CBA converged after {outer} iterations: beta={beta:.12g}, kkt={kkt:.3e}")
    else:
        kkt = float(np.expm1(np.max(sweep.log_column_sums(full=True))))
        logger.warning(f"CBA hit max_outer_iterations={cfg.max_outer_iterations} for D={D}")
    return finalize_solution(kernel, quad, r, outer, converged, kkt, nodes=grid.nodes, history=history)


def _zero_rate_solution(kernel, quad: Quadrature, j: int, grid: ReproductionGrid) -> RDSolution:
    r = np.zeros(kernel.n)
    r[j] = 1.0
    return finalize_solution(
        kernel.with_beta(0.0), quad, r, 0, True, 0.0, nodes=grid.nodes, status="rate_zero"
    )
