"""Built-in self-check table run by the oracle-check command."""
import logging
from typing import Callable, List, NamedTuple

import numpy as np

from numerics.distortion import DistortionFn
from numerics.grids import build_grid_fixed
from numerics.sources import SourceSpec, build_quadrature
from services.analysis import SolverTolerances, refine_solution, sandwich_check
from services.oracles import brute_force_small, gaussian_rdf_oracle, gaussian_slope_oracle, random_instance
from solvers.ba import BAConfig, ba_solve, solve_fixed_beta
from solvers.cba import CBAConfig, GPrime, cba_solve, eval_G, eval_G_prime

logger = logging.getLogger(__name__)

SUITE_SEED = 20240611
INSTANCES = 20
BRUTE_FORCE_BETAS = (0.3, 1.0, 3.0)
G_BETAS = (0.1, 0.5, 1.0, 2.0, 4.0)
FD_STEP = 1e-6
FD_RTOL = 1e-6


class OracleCheck(NamedTuple):
    name: str
    passed: bool
    detail: str


GPrimeFn = Callable[..., GPrime]


def check_brute_force(rng: np.random.Generator) -> OracleCheck:
    worst = 0.0
    for k in range(INSTANCES):
        beta = BRUTE_FORCE_BETAS[k % len(BRUTE_FORCE_BETAS)]
        m = int(rng.integers(1, 4))
        kernel, quad = random_instance(rng, m, 2, beta)
        sol = ba_solve(kernel, quad, BAConfig(beta=beta))
        oracle = brute_force_small(kernel, quad, resolution=1e-6)
        worst = max(worst, abs(sol.objective_f - max(0.0, oracle.f_star)))
    return OracleCheck("brute_force_ba", worst <= 1e-6, f"{INSTANCES} instances, max |f - f*| = {worst:.3e}")


def check_gaussian(D: float = 0.25) -> OracleCheck:
    source = SourceSpec.gaussian(0.0, 1.0)
    quad = build_quadrature(source, 1000, "gauss_legendre_composite")
    grid = build_grid_fixed(4.0, 400)
    sol = cba_solve(quad, grid, DistortionFn.squared_error(), CBAConfig(distortion_target=D))
    rate_error = abs(sol.rate - gaussian_rdf_oracle(1.0, D))
    slope = gaussian_slope_oracle(D)
    beta_error = abs(sol.beta - slope) / slope
    passed = sol.converged and rate_error <= 0.02 and beta_error <= 0.05
    return OracleCheck(
        "gaussian_rdf",
        passed,
        f"D={D}: |R - oracle| = {rate_error:.3e} nats, relative beta error {beta_error:.3e}",
    )


def check_g_derivative(rng: np.random.Generator, g_prime: GPrimeFn = eval_G_prime) -> OracleCheck:
    failures: List[str] = []
    worst = 0.0
    for k in range(INSTANCES):
        kernel, quad = random_instance(rng, int(rng.integers(2, 4)), 3, 1.0)
        rho = kernel.rho_entries
        r = rng.dirichlet(np.ones(kernel.n))
        D = 1.0
        values = [eval_G(quad, rho, r, beta, D) for beta in G_BETAS]
        if not all(b < a for a, b in zip(values, values[1:])):
            failures.append(f"instance {k}: G not strictly decreasing")
        for beta in G_BETAS:
            slope = g_prime(quad, rho, r, beta).value
            fd = (eval_G(quad, rho, r, beta + FD_STEP, D) - eval_G(quad, rho, r, beta - FD_STEP, D)) / (2 * FD_STEP)
            if slope > 0:
                failures.append(f"instance {k}: G'({beta}) = {slope:.3e} > 0")
            gap = abs(fd - slope)
            worst = max(worst, gap / max(abs(fd), 1e-300))
            if gap > FD_RTOL * abs(fd) + 1e-10:
                failures.append(f"instance {k}: G'({beta}) = {slope:.6e}, finite difference {fd:.6e}")
    detail = f"{INSTANCES} instances, worst relative gap {worst:.3e}"
    if failures:
        detail += f"; first failure: {failures[0]}"
    return OracleCheck("g_finite_difference", not failures, detail)


def check_sandwich(beta: float = 0.1, coarse_n: int = 40, fine_n: int = 320) -> OracleCheck:
    source = SourceSpec.uniform(-8.0, 8.0)
    quad = build_quadrature(source, 300)
    dist = DistortionFn.squared_error()
    tolerances = SolverTolerances()
    grid_coarse = build_grid_fixed(8.0, coarse_n)
    coarse = solve_fixed_beta(quad, grid_coarse, dist, BAConfig(beta=beta))
    fine = refine_solution(quad, dist, "ba_fixed_beta", beta, tolerances, coarse, build_grid_fixed(8.0, fine_n))
    passed = coarse.converged and fine.converged and sandwich_check(coarse, fine, grid_coarse, quad, dist)
    return OracleCheck(
        "sandwich",
        passed,
        f"beta={beta}, n={coarse_n} vs n={fine_n}: f = {coarse.objective_f:.10g} / {fine.objective_f:.10g}",
    )


def run_oracle_suite(g_prime: GPrimeFn = eval_G_prime) -> List[OracleCheck]:
    """
    Run every built-in check; a check that raises is recorded as failed.

    Args:
        g_prime: Derivative of G under test, replaceable to run negative controls.
    """
    rng = np.random.default_rng(SUITE_SEED)
    checks = [
        ("brute_force_ba", lambda: check_brute_force(rng)),
        ("gaussian_rdf", check_gaussian),
        ("g_finite_difference", lambda: check_g_derivative(rng, g_prime)),
        ("sandwich", check_sandwich),
    ]
    results = []
    for name, run in checks:
        try:
            result = run()
        except Exception as e:
            logger.error(f"Oracle check {name} raised: {str(e)}", exc_info=True)
            result = OracleCheck(name, False, f"raised {type(e).__name__}: {e}")
        logger.info(f"Oracle check {result.name}: {'PASS' if result.passed else 'FAIL'} ({result.detail})")
        results.append(result)
    return results


def format_table(results: List[OracleCheck]) -> str:
    width = max(len(r.name) for r in results) if results else 5
    lines = [f"{'check':<{width}}  status  detail"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.detail}")
    return "\n".join(lines)


def all_passed(results: List[OracleCheck]) -> bool:
    return bool(results) and all(r.passed for r in results)
