import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np
from scipy.special import logsumexp

from config.config import PROGRESS_EVERY
from numerics.distortion import (
    DistortionFn,
    LogKernel,
    Posterior,
    assemble_kernel,
    check_distribution,
    posterior,
)
from numerics.errors import NumericalError, ValidationError
from numerics.grids import ReproductionGrid
from numerics.sources import Quadrature

logger = logging.getLogger(__name__)

# Masses below this are frozen at exactly 0
PRUNE_THRESHOLD = 1e-300
DESCENT_TOL = 1e-12
# Widest per-row spread of -beta * rho for which the row-shifted kernel is
# kept in linear scale; e^-600 / n still leaves every partition sum positive
LINEAR_SCALE_RANGE = 600.0


@dataclass(frozen=True)
class BAConfig:
    """
    Settings for a fixed-beta Blahut-Arimoto solve.

    Attributes:
        beta: Multiplier, must match the kernel's.
        max_iterations: Iteration cap; hitting it yields converged=False.
        objective_tolerance: Stop once |f_t - f_{t-1}| falls below this ...
        kkt_tolerance: ... and the KKT residual falls below this.
        initialization: None for uniform over the grid, else a strictly positive
            probability vector.
    """
    beta: float
    max_iterations: int = 100_000
    objective_tolerance: float = 1e-10
    kkt_tolerance: float = 1e-6
    initialization: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not (self.objective_tolerance > 0 and self.kkt_tolerance > 0):
            raise ValidationError("Tolerances must be > 0")
        if self.initialization is not None:
            init = np.asarray(self.initialization, dtype=np.float64)
            check_distribution(init, init.size)
            if np.any(init <= 0):
                raise ValidationError("Custom initialization must be strictly positive")


@dataclass
class RDSolution:
    """
    Result of a discrete solve.

    Attributes:
        r: Reproduction weights on the grid nodes.
        beta: Final multiplier.
        objective_f: Fixed-beta objective at (r, beta).
        distortion: Achieved average distortion.
        rate: max(0, raw_rate), in nats.
        iterations: Number of r-updates performed.
        converged: Objective and KKT tolerances both met.
        kkt_residual: max_j c_j - 1 at the final r.
        raw_rate: objective_f - beta * distortion before clamping.
        nodes: Reproduction node coordinates, when known.
        status: 'converged', 'max_iterations' or 'rate_zero'.
        history: Objective value after every iteration.
    """
    r: np.ndarray
    beta: float
    objective_f: float
    distortion: float
    rate: float
    iterations: int
    converged: bool
    kkt_residual: float
    raw_rate: float
    nodes: Optional[np.ndarray] = None
    status: str = "converged"
    history: List[float] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return int(self.r.size)


@dataclass
class OperationCounter:
    """
    Multiply-adds spent on kernel entries.

    Every sweep over kernel entries adds the number of (i, j) entries it
    actually touched, so restricting work to the support shows up here.
    """
    multiply_adds: int = 0
    steps: int = 0

    def add(self, entries: int) -> None:
        self.multiply_adds += int(entries)

    def step(self) -> None:
        self.steps += 1


def raw_objective(quad: Quadrature, post: Posterior) -> float:
    return -math.fsum(quad.weights * post.log_partition)


def log_column_sums(kernel: LogKernel, quad: Quadrature, post: Posterior) -> np.ndarray:
    """log c_j, c_j = sum_i w_i exp(-beta rho_ij) / Z_i, for every node j."""
    if kernel.beta == 0.0:
        return np.zeros(kernel.n)
    return logsumexp(
        kernel.log_entries - post.log_partition[:, None],
        axis=0,
        b=quad.weights[:, None],
    )


def check_rows(post: Posterior) -> None:
    bad = np.flatnonzero(~np.isfinite(post.log_partition))
    if bad.size:
        raise NumericalError(f"Partition sum vanished in source row i={int(bad[0])}")


def advance(r: np.ndarray, support: np.ndarray, log_c: np.ndarray) -> np.ndarray:
    """
    r'_j = r_j c_j on the support, renormalized in log domain, with tiny masses pruned.

    log_c holds log c_j for the support nodes only. When every c_j is exactly 1
    r is returned unchanged.
    """
    if not np.any(log_c):
        return r.copy()
    log_next = np.log(r[support]) + log_c
    log_next -= logsumexp(log_next)
    r_next = np.zeros_like(r)
    r_next[support] = np.exp(log_next)
    r_next[r_next < PRUNE_THRESHOLD] = 0.0
    return r_next / math.fsum(r_next)


class LogDomainSweep:
    """
    Partition sums and column sums of the kernel, restricted to the support of r.

    The rho columns of the current support are cached; the support of a
    Blahut-Arimoto iterate only shrinks, so the cache is rebuilt only when
    nodes are pruned. beta may be changed between evaluations.
    """

    def __init__(self, rho: np.ndarray, quad: Quadrature, beta: float, counter: Optional[OperationCounter] = None):
        self.rho = rho
        self.weights = quad.weights
        self.beta = float(beta)
        self.counter = counter
        self.support = np.arange(0)
        self.log_partition = np.zeros(rho.shape[0])
        self._block = rho

    def _columns(self, support: np.ndarray) -> np.ndarray:
        if support.size != self._block.shape[1]:
            self._block = self.rho if support.size == self.rho.shape[1] else np.ascontiguousarray(self.rho[:, support])
        return self._block

    def _count(self, entries: int) -> None:
        if self.counter is not None:
            self.counter.add(entries)

    def evaluate(self, r: np.ndarray) -> float:
        """Set the support and log-partition for r; returns the raw objective f(r)."""
        support = np.flatnonzero(r > 0)
        block = self._columns(support)
        self.support = support
        self._count(block.size)
        if self.beta == 0.0:
            self.log_partition = np.zeros(self.rho.shape[0])
            return 0.0
        log_z = logsumexp(np.log(r[support]) - self.beta * block, axis=1)
        bad = np.flatnonzero(~np.isfinite(log_z))
        if bad.size:
            raise NumericalError(f"Partition sum vanished in source row i={int(bad[0])}")
        self.log_partition = log_z
        return -math.fsum(self.weights * log_z)

    def log_column_sums(self, full: bool = False) -> np.ndarray:
        """log c_j over the support, or over every node when full is set."""
        block = self.rho if full else self._block
        self._count(block.size)
        if self.beta == 0.0:
            return np.zeros(block.shape[1])
        return logsumexp(-self.beta * block - self.log_partition[:, None], axis=0, b=self.weights[:, None])


class ScaledSweep(LogDomainSweep):
    """
    Same sums as LogDomainSweep, on the precomputed row-shifted kernel
    K_ij = exp(-beta rho_ij - s_i) with s_i = max_j (-beta rho_ij).

    Partition and column sums become matrix-vector products. Only valid while
    every row spread of beta * rho stays below LINEAR_SCALE_RANGE.
    """

    def __init__(self, kernel: LogKernel, quad: Quadrature, counter: Optional[OperationCounter] = None):
        super().__init__(kernel.rho_entries, quad, kernel.beta, counter)
        self.shift = kernel.log_entries.max(axis=1)
        self.entries = np.exp(kernel.log_entries - self.shift[:, None])
        self._block = self.entries
        self.scaled_weights = self.weights.copy()

    def _columns(self, support: np.ndarray) -> np.ndarray:
        if support.size != self._block.shape[1]:
            full = support.size == self.entries.shape[1]
            self._block = self.entries if full else np.ascontiguousarray(self.entries[:, support])
        return self._block

    def evaluate(self, r: np.ndarray) -> float:
        support = np.flatnonzero(r > 0)
        block = self._columns(support)
        self.support = support
        self._count(block.size)
        z = block @ r[support]
        bad = np.flatnonzero(~(z > 0))
        if bad.size:
            raise NumericalError(f"Partition sum vanished in source row i={int(bad[0])}")
        self.scaled_weights = self.weights / z
        self.log_partition = np.log(z) + self.shift
        return -math.fsum(self.weights * self.log_partition)

    def log_column_sums(self, full: bool = False) -> np.ndarray:
        block = self.entries if full else self._block
        self._count(block.size)
        with np.errstate(divide="ignore"):
            return np.log(self.scaled_weights @ block)


def make_sweep(kernel: LogKernel, quad: Quadrature, counter: Optional[OperationCounter] = None) -> Union[LogDomainSweep, ScaledSweep]:
    """Linear-scale sweep when the kernel's row spread allows it, log-domain otherwise."""
    if kernel.beta == 0.0:
        return LogDomainSweep(kernel.rho_entries, quad, 0.0, counter)
    spread = float(np.max(kernel.log_entries.max(axis=1) - kernel.log_entries.min(axis=1)))
    if spread <= LINEAR_SCALE_RANGE:
        return ScaledSweep(kernel, quad, counter)
    logger.debug(f"Kernel row spread {spread:.1f} too wide for linear scale, iterating in log domain")
    return LogDomainSweep(kernel.rho_entries, quad, kernel.beta, counter)


def ba_step(
    kernel: LogKernel,
    quad: Quadrature,
    r: np.ndarray,
    counter: Optional[OperationCounter] = None,
) -> np.ndarray:
    """
    One Blahut-Arimoto update r'_j = sum_i w_i r_j e^{-beta rho_ij} / Z_i.

    Args:
        kernel: Log-domain kernel at the current beta.
        quad: Source quadrature.
        r: Current reproduction weights.
        counter: Optional operation counter, incremented by the kernel entries
            touched (partition sums over the support, column sums over all nodes).

    Returns:
        np.ndarray: Next reproduction weights (a probability vector).

    Raises:
        ValidationError: If r is not a probability vector.
        NumericalError: If a partition row vanishes.
    """
    r = check_distribution(r, kernel.n)
    post = posterior(kernel.log_entries, kernel.beta, r)
    check_rows(post)
    log_c = log_column_sums(kernel, quad, post)
    if counter is not None:
        counter.add(kernel.m * post.support.size + kernel.log_entries.size)
        counter.step()
    return advance(r, post.support, log_c[post.support])


def kkt_residual(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    """max_j c_j - 1; at an optimum this is <= 0 with c_j = 1 on the support."""
    r = check_distribution(r, kernel.n)
    post = posterior(kernel.log_entries, kernel.beta, r)
    check_rows(post)
    return float(np.expm1(np.max(log_column_sums(kernel, quad, post))))


def initial_distribution(n: int, initialization: Optional[np.ndarray]) -> np.ndarray:
    if initialization is None:
        return np.full(n, 1.0 / n)
    init = np.asarray(initialization, dtype=np.float64)
    if init.size != n:
        raise ValidationError(f"Initialization has length {init.size}, grid has {n} nodes")
    return init.copy()


def finalize_solution(
    kernel: LogKernel,
    quad: Quadrature,
    r: np.ndarray,
    iterations: int,
    converged: bool,
    kkt: float,
    nodes: Optional[np.ndarray] = None,
    status: Optional[str] = None,
    history: Optional[List[float]] = None,
) -> RDSolution:
    """Evaluate f, D and R at the final r and pack an RDSolution."""
    post = posterior(kernel.log_entries, kernel.beta, r)
    f_raw = raw_objective(quad, post)
    expected = np.sum(np.exp(post.log_weights) * kernel.rho_entries[:, post.support], axis=1)
    distortion = math.fsum(quad.weights * expected)
    raw_rate = f_raw - kernel.beta * distortion
    return RDSolution(
        r=r,
        beta=kernel.beta,
        objective_f=max(0.0, f_raw),
        distortion=distortion,
        rate=max(0.0, raw_rate),
        iterations=iterations,
        converged=converged,
        kkt_residual=kkt,
        raw_rate=raw_rate,
        nodes=nodes,
        status=status or ("converged" if converged else "max_iterations"),
        history=history or [],
    )


def ba_solve(
    kernel: LogKernel,
    quad: Quadrature,
    config: BAConfig,
    nodes: Optional[np.ndarray] = None,
    counter: Optional[OperationCounter] = None,
) -> RDSolution:
    """
    Iterate Blahut-Arimoto steps until the objective settles and KKT holds.

    The objective is checked for monotone descent after every step; an increase
    beyond 1e-12 raises. Running out of iterations is reported through
    converged=False. Steps only touch the support of r; the KKT residual over
    all nodes is evaluated once the objective change and the support residual
    are both within tolerance.

    Args:
        kernel: Kernel assembled at config.beta.
        quad: Source quadrature.
        config: Solver settings.
        nodes: Grid coordinates stored on the solution.
        counter: Optional operation counter.

    Returns:
        RDSolution: Final weights and diagnostics.

    Raises:
        ValidationError: If kernel.beta differs from config.beta.
        NumericalError: On a descent violation or a vanishing partition row.
    """
    if kernel.beta != float(config.beta):
        raise ValidationError(f"Kernel beta {kernel.beta} does not match config beta {config.beta}")

    sweep = make_sweep(kernel, quad, counter)
    r = initial_distribution(kernel.n, config.initialization)
    f = sweep.evaluate(r)
    history = [f]
    change = math.inf
    kkt = math.inf
    iterations = 0
    converged = False
    logger.info(f"BA solve: m={kernel.m}, n={kernel.n}, beta={kernel.beta}, {type(sweep).__name__}")

    while True:
        log_c = sweep.log_column_sums()
        if change <= config.objective_tolerance and np.expm1(np.max(log_c)) <= config.kkt_tolerance:
            kkt = float(np.expm1(np.max(sweep.log_column_sums(full=True))))
            if kkt <= config.kkt_tolerance:
                converged = True
                break
        if iterations >= config.max_iterations:
            break

        r = advance(r, sweep.support, log_c)
        f_next = sweep.evaluate(r)
        if counter is not None:
            counter.step()
        if f_next > f + DESCENT_TOL:
            raise NumericalError(
                f"Objective increased from {f!r} to {f_next!r} at iteration {iterations + 1} (beta={kernel.beta})"
            )
        change = abs(f - f_next)
        f = f_next
        history.append(f)
        iterations += 1
        if iterations % PROGRESS_EVERY == 0:
            logger.debug(
                f"BA iteration {iterations}: f={f:.15g}, change={change:.3e}, support={sweep.support.size}"
            )

    if converged:
        logger.info(f"BA converged after {iterations} iterations: f={f:.15g}, kkt={kkt:.3e}")
    else:
        kkt = float(np.expm1(np.max(sweep.log_column_sums(full=True))))
        logger.warning(
            f"BA hit max_iterations={config.max_iterations} at beta={kernel.beta}: "
            f"last change {change:.3e}, kkt {kkt:.3e}"
        )
    return finalize_solution(kernel, quad, r, iterations, converged, kkt, nodes=nodes, history=history)


def solve_fixed_beta(quad: Quadrature, grid: ReproductionGrid, dist: DistortionFn, config: BAConfig) -> RDSolution:
    """Assemble the kernel at config.beta and run ba_solve on the grid."""
    kernel = assemble_kernel(quad, grid, dist, config.beta)
    return ba_solve(kernel, quad, config, nodes=grid.nodes)
