import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import erf, roots_legendre

from numerics.errors import UnsupportedDimensionError, ValidationError

logger = logging.getLogger(__name__)

SourceKind = Literal["uniform", "gaussian", "tabulated"]
QuadratureRule = Literal["midpoint", "trapezoid", "gauss_legendre_composite"]

QUADRATURE_RULES: Tuple[str, ...] = ("midpoint", "trapezoid", "gauss_legendre_composite")
DEFAULT_RULE: QuadratureRule = "midpoint"
DEFAULT_TRUNCATION_SIGMAS = 8.0
# Panel order cap for the composite Gauss-Legendre rule
MAX_PANEL_ORDER = 10


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class SourceSpec:
    """
    A one-dimensional source distribution p with compact numerical support.

    Use the ``uniform``, ``gaussian`` and ``tabulated`` constructors rather than
    filling the fields directly; they validate the parameters.

    Attributes:
        kind: 'uniform', 'gaussian' or 'tabulated'.
        lo, hi: Support of a uniform source.
        mean, stddev: Parameters of a Gaussian source.
        truncation_halfwidth: Gaussian support is [mean - halfwidth, mean + halfwidth].
        nodes, densities: Tabulated density, piecewise linear between nodes.
        dimension: Dimension of X (only 1 is supported).
    """
    kind: SourceKind
    lo: float = 0.0
    hi: float = 0.0
    mean: float = 0.0
    stddev: float = 1.0
    truncation_halfwidth: float = 0.0
    nodes: Tuple[float, ...] = field(default_factory=tuple)
    densities: Tuple[float, ...] = field(default_factory=tuple)
    dimension: int = 1

    def __post_init__(self) -> None:
        if self.dimension != 1:
            raise UnsupportedDimensionError(f"Only one-dimensional sources are supported, got d={self.dimension}")
        if self.kind == "uniform":
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)) or not self.hi > self.lo:
                raise ValidationError(f"Uniform source needs finite lo < hi, got lo={self.lo}, hi={self.hi}")
        elif self.kind == "gaussian":
            if not (math.isfinite(self.stddev) and self.stddev > 0):
                raise ValidationError(f"Gaussian source needs stddev > 0, got {self.stddev}")
            if not (math.isfinite(self.truncation_halfwidth) and self.truncation_halfwidth > 0):
                raise ValidationError(
                    f"Gaussian source needs truncation_halfwidth > 0, got {self.truncation_halfwidth}"
                )
            if not math.isfinite(self.mean):
                raise ValidationError(f"Gaussian mean must be finite, got {self.mean}")
        elif self.kind == "tabulated":
            nodes = np.asarray(self.nodes, dtype=np.float64)
            densities = np.asarray(self.densities, dtype=np.float64)
            if nodes.ndim != 1 or nodes.size == 0 or nodes.shape != densities.shape:
                raise ValidationError("Tabulated source needs equally long, non-empty nodes and densities")
            if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(densities))):
                raise ValidationError("Tabulated source nodes and densities must be finite")
            if np.any(densities < 0):
                raise ValidationError("Tabulated densities must be nonnegative")
            if np.any(np.diff(nodes) <= 0):
                raise ValidationError("Tabulated nodes must be strictly increasing")
            if not np.any(densities > 0):
                raise ValidationError("Tabulated densities must have positive mass")
            if nodes.size > 1 and self._table_mass() <= 0:
                raise ValidationError("Tabulated density integrates to zero")
        else:
            raise ValidationError(f"Unknown source kind: {self.kind}")

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "SourceSpec":
        return cls(kind="uniform", lo=float(lo), hi=float(hi))

    @classmethod
    def gaussian(cls, mean: float, stddev: float, truncation_halfwidth: Optional[float] = None) -> "SourceSpec":
        """Gaussian source truncated to mean +/- truncation_halfwidth (default 8 stddev)."""
        if truncation_halfwidth is None:
            truncation_halfwidth = DEFAULT_TRUNCATION_SIGMAS * float(stddev)
        return cls(
            kind="gaussian",
            mean=float(mean),
            stddev=float(stddev),
            truncation_halfwidth=float(truncation_halfwidth),
        )

    @classmethod
    def tabulated(cls, nodes: Sequence[float], densities: Sequence[float]) -> "SourceSpec":
        return cls(
            kind="tabulated",
            nodes=tuple(float(v) for v in nodes),
            densities=tuple(float(v) for v in densities),
        )

    @property
    def is_point_mass(self) -> bool:
        return self.kind == "tabulated" and len(self.nodes) == 1

    def support(self) -> Tuple[float, float]:
        """Compact numerical support [a, b] of the source."""
        if self.kind == "uniform":
            return self.lo, self.hi
        if self.kind == "gaussian":
            return self.mean - self.truncation_halfwidth, self.mean + self.truncation_halfwidth
        return self.nodes[0], self.nodes[-1]

    def variance(self) -> float:
        """Nominal variance (untruncated for Gaussian sources)."""
        if self.kind == "uniform":
            return (self.hi - self.lo) ** 2 / 12.0
        if self.kind == "gaussian":
            return self.stddev ** 2
        if self.is_point_mass:
            return 0.0
        # 3-point Gauss-Legendre per segment is exact for x^2 times a linear density
        nodes = np.asarray(self.nodes)
        t, w = roots_legendre(3)
        half = 0.5 * np.diff(nodes)
        x = (0.5 * (nodes[1:] + nodes[:-1]))[:, None] + half[:, None] * t[None, :]
        weights = (half[:, None] * w[None, :]) * np.interp(x, nodes, np.asarray(self.densities))
        weights = weights / weights.sum()
        mean = float(np.sum(weights * x))
        return float(np.sum(weights * (x - mean) ** 2))

    def _table_mass(self) -> float:
        return float(trapezoid(np.asarray(self.densities), np.asarray(self.nodes)))

    def _kernel(self, x: np.ndarray) -> np.ndarray:
        """Unnormalized density used for raw quadrature weights."""
        a, b = self.support()
        inside = (x >= a) & (x <= b)
        if self.kind == "uniform":
            values = np.full_like(x, 1.0 / (self.hi - self.lo))
        elif self.kind == "gaussian":
            z = (x - self.mean) / self.stddev
            values = np.exp(-0.5 * z * z) / (self.stddev * math.sqrt(2.0 * math.pi))
        else:
            values = np.interp(x, np.asarray(self.nodes), np.asarray(self.densities))
        return np.where(inside, values, 0.0)

    def _normalizer(self) -> float:
        if self.kind == "gaussian":
            return float(erf(self.truncation_halfwidth / (self.stddev * math.sqrt(2.0))))
        if self.kind == "tabulated" and not self.is_point_mass:
            return self._table_mass()
        return 1.0


def density(source: SourceSpec, x: float) -> float:
    """
    Evaluate the source density p(x).

    Gaussian densities are renormalized by the mass kept inside the truncation
    window; tabulated densities are interpolated linearly and normalized by their
    trapezoid integral. A single-node table is a point mass and reports the raw
    table value at its node.

    Args:
        source: The source distribution.
        x: Evaluation point.

    Returns:
        float: p(x) >= 0, and 0 outside the support.
    """
    value = float(source._kernel(np.asarray([x], dtype=np.float64))[0])
    return value / source._normalizer()


@dataclass(frozen=True)
class Quadrature:
    """
    Integration rule over the source space.

    Attributes:
        nodes: The x_i, inside the source support.
        weights: Integration coefficient times density, renormalized to sum to 1.
        rule: Name of the rule used to build the nodes.
        raw_mass: Sum of the weights before renormalization.
    """
    nodes: np.ndarray
    weights: np.ndarray
    rule: str
    raw_mass: float

    @property
    def m(self) -> int:
        return int(self.nodes.size)


def _panel_order(m: int) -> int:
    return max(q for q in range(1, min(m, MAX_PANEL_ORDER) + 1) if m % q == 0)


def _rule_nodes(a: float, b: float, m: int, rule: str) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and integration coefficients A_i of the rule on [a, b]."""
    if rule == "midpoint" or (rule == "trapezoid" and m == 1):
        step = (b - a) / m
        nodes = a + (np.arange(m) + 0.5) * step
        return nodes, np.full(m, step)
    if rule == "trapezoid":
        nodes = np.linspace(a, b, m)
        step = (b - a) / (m - 1)
        coeffs = np.full(m, step)
        coeffs[0] = coeffs[-1] = 0.5 * step
        return nodes, coeffs
    if rule == "gauss_legendre_composite":
        order = _panel_order(m)
        panels = m // order
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        t, w = roots_legendre(order)
        nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
        coeffs = (half[:, None] * w[None, :]).ravel()
        return nodes, coeffs
    raise ValidationError(f"Unknown quadrature rule: {rule}")


def build_quadrature(source: SourceSpec, m: int, rule: QuadratureRule = DEFAULT_RULE) -> Quadrature:
    """
    Build the quadrature (x_i, w_i) with w_i = A_i * p(x_i) over the source support.

    Args:
        source: A validated source.
        m: Number of nodes, m >= 1.
        rule: 'midpoint' (default), 'trapezoid' or 'gauss_legendre_composite'.
            The composite Gauss-Legendre rule uses panels of order q, the largest
            divisor of m not above 10, so exactly m nodes are produced.

    Returns:
        Quadrature: Deterministic nodes and weights summing to 1.

    Raises:
        ValidationError: If m < 1, the rule is unknown or no mass is captured.
    """
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or m < 1:
        raise ValidationError(f"Quadrature needs m >= 1, got {m!r}")
    if rule not in QUADRATURE_RULES:
        raise ValidationError(f"Unknown quadrature rule: {rule}")
    m = int(m)

    if source.is_point_mass:
        logger.debug("Point-mass source, quadrature collapses to a single node")
        return Quadrature(
            nodes=_frozen(np.asarray(source.nodes)),
            weights=_frozen(np.ones(1)),
            rule=rule,
            raw_mass=1.0,
        )

    a, b = source.support()
    nodes, coeffs = _rule_nodes(a, b, m, rule)
    raw = coeffs * source._kernel(nodes)
    raw_mass = math.fsum(raw)
    if not raw_mass > 0:
        raise ValidationError(f"Quadrature captured no mass for source {source.kind} with m={m}")
    weights = raw / raw_mass
    logger.debug(f"Built {rule} quadrature with m={m} on [{a}, {b}], raw mass {raw_mass!r}")
    return Quadrature(nodes=_frozen(nodes), weights=_frozen(weights), rule=rule, raw_mass=raw_mass)
