import logging
import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from numerics.errors import EvaluationError, ValidationError
from numerics.grids import ReproductionGrid
from numerics.sources import Quadrature

logger = logging.getLogger(__name__)

DistortionKind = Literal["squared_error", "absolute_error", "custom"]
DISTORTION_KINDS: Tuple[str, ...] = ("squared_error", "absolute_error")

# Probability vectors must sum to 1 within this tolerance
PROB_TOL = 1e-12


@dataclass(frozen=True)
class DistortionFn:
    """
    Distortion measure rho(x, y) >= 0.

    The built-in measures are continuous difference distortions and satisfy the
    boundedness and continuity assumptions on compact supports. A custom
    callable is trusted to do the same; only its values are checked.
    """
    kind: DistortionKind = "squared_error"
    func: Optional[Callable] = None

    @classmethod
    def squared_error(cls) -> "DistortionFn":
        return cls("squared_error")

    @classmethod
    def absolute_error(cls) -> "DistortionFn":
        return cls("absolute_error")

    @classmethod
    def custom(cls, func: Callable) -> "DistortionFn":
        if not callable(func):
            raise ValidationError("Custom distortion must be callable")
        return cls("custom", func)

    @classmethod
    def from_name(cls, name: str) -> "DistortionFn":
        if name == "squared_error":
            return cls.squared_error()
        if name == "absolute_error":
            return cls.absolute_error()
        raise ValidationError(f"Unknown distortion kind: {name}")

    def matrix(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Evaluate rho(x_i, y_j) into an (m, n) matrix."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        diff = x[:, None] - y[None, :]
        if self.kind == "squared_error":
            return diff * diff
        if self.kind == "absolute_error":
            return np.abs(diff)
        if self.kind != "custom" or self.func is None:
            raise ValidationError(f"Distortion kind {self.kind} has no evaluator")

        shape = (x.size, y.size)
        try:
            values = np.asarray(self.func(x[:, None], y[None, :]), dtype=np.float64)
            if values.shape != shape:
                values = np.broadcast_to(values, shape).copy()
        except (TypeError, ValueError):
            # Scalar-only callable
            values = np.empty(shape)
            for i, xi in enumerate(x):
                for j, yj in enumerate(y):
                    values[i, j] = float(self.func(float(xi), float(yj)))
        return values


@dataclass(frozen=True)
class LogKernel:
    """
    Discretized kernel of the fixed-beta problem.

    Attributes:
        beta: Multiplier beta >= 0.
        log_entries: (m, n) matrix of -beta * rho(x_i, y_j).
        rho_entries: (m, n) matrix of rho(x_i, y_j), kept for the G evaluations.
    """
    beta: float
    log_entries: np.ndarray
    rho_entries: np.ndarray

    @property
    def m(self) -> int:
        return int(self.rho_entries.shape[0])

    @property
    def n(self) -> int:
        return int(self.rho_entries.shape[1])

    def with_beta(self, beta: float) -> "LogKernel":
        """Same rho, new multiplier. rho is not re-evaluated."""
        beta = _check_beta(beta)
        log_entries = -beta * self.rho_entries
        log_entries.setflags(write=False)
        return LogKernel(beta=beta, log_entries=log_entries, rho_entries=self.rho_entries)


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not math.isfinite(beta) or beta < 0:
        raise ValidationError(f"beta must be finite and >= 0, got {beta}")
    return beta


def assemble_kernel(quad: Quadrature, grid: ReproductionGrid, dist: DistortionFn, beta: float) -> LogKernel:
    """
    Evaluate rho on all (x_i, y_j) pairs and build the log-domain kernel.

    Raises:
        ValidationError: If beta is negative or not finite.
        EvaluationError: If rho is negative or NaN somewhere; names the first (i, j).
    """
    beta = _check_beta(beta)
    rho = np.ascontiguousarray(dist.matrix(quad.nodes, grid.nodes), dtype=np.float64)
    bad = ~np.isfinite(rho) | (rho < 0)
    if np.any(bad):
        i, j = (int(v) for v in np.argwhere(bad)[0])
        logger.error(f"Distortion returned {rho[i, j]!r} at (i={i}, j={j})")
        raise EvaluationError(
            f"Distortion must be finite and >= 0; got {rho[i, j]!r} at (i={i}, j={j}) "
            f"for x={quad.nodes[i]!r}, y={grid.nodes[j]!r}",
            index=(i, j),
        )
    rho.setflags(write=False)
    log_entries = -beta * rho
    log_entries.setflags(write=False)
    logger.debug(f"Assembled {rho.shape[0]}x{rho.shape[1]} kernel at beta={beta}")
    return LogKernel(beta=beta, log_entries=log_entries, rho_entries=rho)


def check_distribution(r: np.ndarray, n: int) -> np.ndarray:
    """Validate a probability vector of length n and return it as float64."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 1 or r.size != n:
        raise ValidationError(f"Expected a probability vector of length {n}, got shape {r.shape}")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise ValidationError("Probability vector must be finite and nonnegative")
    if not np.any(r > 0):
        raise ValidationError("Probability vector is all zero")
    total = math.fsum(r)
    if abs(total - 1.0) > PROB_TOL:
        raise ValidationError(f"Probability vector sums to {total!r}, not 1")
    return r


@dataclass(frozen=True)
class Posterior:
    """Row-wise posterior over the support of r: w_ij = r_j exp(-beta rho_ij) / Z_i."""
    support: np.ndarray
    log_partition: np.ndarray
    log_weights: np.ndarray


def posterior(log_entries: np.ndarray, beta: float, r: np.ndarray) -> Posterior:
    """
    Log-domain posterior restricted to the support {j : r_j > 0}.

    At beta = 0 the partition is exactly log(sum r) = 0 and the posterior is r.
    """
    support = np.flatnonzero(r > 0)
    log_r = np.log(r[support])
    if beta == 0.0:
        m = log_entries.shape[0]
        return Posterior(support, np.zeros(m), np.broadcast_to(log_r, (m, support.size)))
    scores = log_entries[:, support] + log_r
    log_z = logsumexp(scores, axis=1)
    return Posterior(support, log_z, scores - log_z[:, None])


def log_partition(kernel: LogKernel, r: np.ndarray) -> np.ndarray:
    """
    log sum_j exp(-beta rho_ij) r_j for each source node i.

    Computed with a max-shifted log-sum-exp over {j : r_j > 0}.

    Raises:
        ValidationError: If r is not a probability vector of length n.
    """
    r = check_distribution(r, kernel.n)
    return posterior(kernel.log_entries, kernel.beta, r).log_partition


def _objective_raw(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    return -math.fsum(quad.weights * log_partition(kernel, r))


def objective_f(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    """Fixed-beta objective f(r) = -sum_i w_i log_partition_i, never negative."""
    # log-partition <= 0 up to rounding
    return max(0.0, _objective_raw(kernel, quad, r))


def posterior_expected_distortion(kernel: LogKernel, r: np.ndarray) -> np.ndarray:
    """Per-row posterior mean of rho, sum_j w_ij rho_ij."""
    post = posterior(kernel.log_entries, kernel.beta, r)
    return np.sum(np.exp(post.log_weights) * kernel.rho_entries[:, post.support], axis=1)


def achieved_distortion(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    """
    Average distortion of the posterior coupling,
    sum_i w_i (sum_j e^{-beta rho_ij} rho_ij r_j) / (sum_j e^{-beta rho_ij} r_j).
    """
    r = check_distribution(r, kernel.n)
    return math.fsum(quad.weights * posterior_expected_distortion(kernel, r))


def raw_rate_of(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    """Unclamped Lagrangian rate f - beta * D in nats."""
    return _objective_raw(kernel, quad, r) - kernel.beta * achieved_distortion(kernel, quad, r)


def rate_of(kernel: LogKernel, quad: Quadrature, r: np.ndarray) -> float:
    """Rate f - beta * D in nats, clamped at 0 (see raw_rate_of for the raw value)."""
    return max(0.0, raw_rate_of(kernel, quad, r))


def rate_in_bits(nats: float) -> float:
    return nats / math.log(2.0)
