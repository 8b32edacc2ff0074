"""Reference values for checking the solvers: closed forms, brute force and 50-digit naive sums."""
import logging
import math
from typing import List, NamedTuple, Tuple

import numpy as np
from mpmath import mp
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from numerics.distortion import LogKernel
from numerics.errors import ValidationError
from numerics.sources import Quadrature

logger = logging.getLogger(__name__)

NAIVE_DIGITS = 50
# Simplex step of the first enumeration; finer resolutions are reached by zooming
COARSE_STEP = 1e-3


class BruteForceResult(NamedTuple):
    f_star: float
    r_star: np.ndarray


def gaussian_rdf_oracle(variance: float, D: float) -> float:
    """R(D) = max(0, 1/2 ln(variance / D)) in nats for a Gaussian source under squared error."""
    if not (variance > 0 and D > 0):
        raise ValidationError(f"Gaussian oracle needs variance > 0 and D > 0, got {variance}, {D}")
    return max(0.0, 0.5 * math.log(variance / D))


def gaussian_slope_oracle(D: float) -> float:
    """Multiplier 1/(2D) on the Gaussian R(D) curve (unit-variance source, D < 1)."""
    return 1.0 / (2.0 * D)


def _objective_batch(kernel: LogKernel, quad: Quadrature, candidates: np.ndarray) -> np.ndarray:
    """f for every row of candidates (K, n)."""
    with np.errstate(divide="ignore"):
        log_r = np.log(candidates)
    total = np.zeros(candidates.shape[0])
    for i in range(kernel.m):
        if quad.weights[i] == 0:
            continue
        total -= quad.weights[i] * logsumexp(kernel.log_entries[i][None, :] + log_r, axis=1)
    return total


def _simplex_points(n: int, step: float, center: np.ndarray = None, radius: float = None) -> np.ndarray:
    """Grid points of the probability simplex (n <= 3), optionally restricted to a box."""
    if n == 1:
        return np.ones((1, 1))
    lo_a, hi_a = 0.0, 1.0
    if center is not None:
        lo_a, hi_a = max(0.0, center[0] - radius), min(1.0, center[0] + radius)
    a = np.arange(lo_a, hi_a + 0.5 * step, step)
    a = np.clip(a, 0.0, 1.0)
    if n == 2:
        return np.stack([a, 1.0 - a], axis=1)
    lo_b, hi_b = 0.0, 1.0
    if center is not None:
        lo_b, hi_b = max(0.0, center[1] - radius), min(1.0, center[1] + radius)
    b = np.clip(np.arange(lo_b, hi_b + 0.5 * step, step), 0.0, 1.0)
    aa, bb = np.meshgrid(a, b, indexing="ij")
    aa, bb = aa.ravel(), bb.ravel()
    keep = aa + bb <= 1.0 + 1e-15
    aa, bb = aa[keep], bb[keep]
    return np.stack([aa, bb, np.clip(1.0 - aa - bb, 0.0, 1.0)], axis=1)


def brute_force_small(kernel: LogKernel, quad: Quadrature, resolution: float = 1e-6) -> BruteForceResult:
    """
    Minimize f over the simplex by grid search, for n <= 3.

    The simplex is enumerated at a 1e-3 step and then zoomed around the best
    point until the step reaches the resolution; f is convex in r, so the
    minimizer stays within one step of the best enumerated point. A final
    local pass polishes the best point (bounded scalar minimization along the
    edge for n = 2).

    Raises:
        ValidationError: If n > 3 or resolution > 1e-3.
    """
    n = kernel.n
    if n > 3:
        raise ValidationError(f"Brute force supports n <= 3, got n={n}")
    if not 0 < resolution <= 1e-3:
        raise ValidationError(f"Resolution must be in (0, 1e-3], got {resolution}")

    if n == 1:
        r = np.ones(1)
        return BruteForceResult(float(_objective_batch(kernel, quad, r[None, :])[0]), r)

    step = max(resolution, COARSE_STEP)
    points = _simplex_points(n, step)
    values = _objective_batch(kernel, quad, points)
    best = int(np.argmin(values))
    best_point, best_value = points[best], float(values[best])

    while step > resolution:
        finer = max(step / 50.0, resolution)
        points = _simplex_points(n, finer, center=best_point, radius=2.0 * step)
        values = _objective_batch(kernel, quad, points)
        idx = int(np.argmin(values))
        if values[idx] <= best_value:
            best_point, best_value = points[idx], float(values[idx])
        step = finer

    if n == 2:
        a0 = best_point[0]
        lo, hi = max(0.0, a0 - resolution), min(1.0, a0 + resolution)
        if hi > lo:
            res = minimize_scalar(
                lambda a: float(_objective_batch(kernel, quad, np.array([[a, 1.0 - a]]))[0]),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-12},
            )
            if res.fun < best_value:
                best_point, best_value = np.array([res.x, 1.0 - res.x]), float(res.fun)

    return BruteForceResult(best_value, np.asarray(best_point, dtype=np.float64))


def random_instance(rng: np.random.Generator, m: int, n: int, beta: float, rho_scale: float = 4.0) -> Tuple[LogKernel, Quadrature]:
    """Random kernel and quadrature: rho uniform on [0, rho_scale], Dirichlet source weights."""
    rho = rng.uniform(0.0, rho_scale, size=(m, n))
    weights = rng.dirichlet(np.ones(m))
    weights = weights / math.fsum(weights)
    nodes = np.sort(rng.uniform(-1.0, 1.0, size=m))
    quad = Quadrature(nodes=nodes, weights=weights, rule="midpoint", raw_mass=1.0)
    kernel = LogKernel(beta=float(beta), log_entries=-float(beta) * rho, rho_entries=rho)
    return kernel, quad


def _mp_rows(kernel: LogKernel, r: np.ndarray) -> List[Tuple[list, object]]:
    """Per row: the terms r_j e^{-beta rho_ij} and their sum, at NAIVE_DIGITS precision."""
    beta = mp.mpf(kernel.beta)
    rows = []
    for i in range(kernel.m):
        terms = [mp.mpf(float(r[j])) * mp.exp(-beta * mp.mpf(float(kernel.rho_entries[i, j]))) for j in range(kernel.n)]
        rows.append((terms, mp.fsum(terms)))
    return rows


def naive_log_partition(kernel: LogKernel, r: np.ndarray) -> List[float]:
    with mp.workdps(NAIVE_DIGITS):
        return [float(mp.log(total)) for _, total in _mp_rows(kernel, r)]


def naive_objective(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    """Direct double-loop evaluation of -sum_i w_i log sum_j e^{-beta rho_ij} r_j."""
    with mp.workdps(NAIVE_DIGITS):
        rows = _mp_rows(kernel, r)
        return float(-mp.fsum(mp.mpf(float(quad.weights[i])) * mp.log(total) for i, (_, total) in enumerate(rows)))


def naive_distortion(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    with mp.workdps(NAIVE_DIGITS):
        rows = _mp_rows(kernel, r)
        value = mp.fsum(
            mp.mpf(float(quad.weights[i]))
            * mp.fsum(t * mp.mpf(float(kernel.rho_entries[i, j])) for j, t in enumerate(terms))
            / total
            for i, (terms, total) in enumerate(rows)
        )
        return float(value)


def naive_rate(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    with mp.workdps(NAIVE_DIGITS):
        return naive_objective(kernel, quad, r) - kernel.beta * naive_distortion(kernel, quad, r)


def naive_ba_step(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> np.ndarray:
    """r'_j = sum_i w_i r_j e^{-beta rho_ij} / Z_i by direct summation."""
    with mp.workdps(NAIVE_DIGITS):
        rows = _mp_rows(kernel, r)
        updated = [
            mp.fsum(mp.mpf(float(quad.weights[i])) * terms[j] / total for i, (terms, total) in enumerate(rows))
            for j in range(kernel.n)
        ]
        norm = mp.fsum(updated)
        return np.array([float(v / norm) for v in updated])


def naive_G(quad: Quadrature, rho_entries: np.ndarray, r: np.ndarray, beta: float, D: float) -> float:
    kernel = LogKernel(beta=float(beta), log_entries=-float(beta) * rho_entries, rho_entries=rho_entries)
    return naive_distortion(kernel, quad, r) - D
