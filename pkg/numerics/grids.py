import logging
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from numerics.errors import ProjectionError, UnsupportedDimensionError, ValidationError
from numerics.sources import SourceSpec

logger = logging.getLogger(__name__)

GridMode = Literal["fixed_box", "expanding"]

# Uniform share mixed into a warm start so every node keeps positive mass
WARM_START_FLOOR = 1e-6


@dataclass(frozen=True)
class ReproductionGrid:
    """
    Equidistant, cell-centered reproduction nodes on a box [-W, W].

    Attributes:
        nodes: The y_j in ascending order, y_j = -W + (j - 1/2) h.
        step: Spacing h.
        edges: n + 1 cell edges from -W to W; cell I_j = [edges[j], edges[j + 1]].
        mode: 'fixed_box' (W = M) or 'expanding' (W = n^(1/(2d))).
        halfwidth: W.
        dimension: d, only 1 is supported.
    """
    nodes: np.ndarray
    step: float
    edges: np.ndarray
    mode: GridMode
    halfwidth: float
    dimension: int = 1

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def cells(self) -> np.ndarray:
        """(n, 2) array of [lower, upper] cell bounds."""
        return np.stack([self.edges[:-1], self.edges[1:]], axis=1)


def _check_dimension(d: int) -> None:
    if d != 1:
        raise UnsupportedDimensionError(f"Reproduction grids support d = 1 only, got d={d}")


def _check_count(n: int) -> int:
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise ValidationError(f"Grid needs n >= 1, got {n!r}")
    return int(n)


def _cell_centered(halfwidth: float, n: int, mode: GridMode) -> ReproductionGrid:
    step = 2.0 * halfwidth / n
    nodes = -halfwidth + (np.arange(n) + 0.5) * step
    edges = np.linspace(-halfwidth, halfwidth, n + 1)
    nodes.setflags(write=False)
    edges.setflags(write=False)
    return ReproductionGrid(nodes=nodes, step=step, edges=edges, mode=mode, halfwidth=halfwidth)


def build_grid_fixed(M: float, n: int, d: int = 1) -> ReproductionGrid:
    """
    Grid on the fixed box [-M, M] with h = 2M / n^(1/d).

    Raises:
        ValidationError: If M <= 0 or n < 1.
        UnsupportedDimensionError: If d != 1.
    """
    _check_dimension(d)
    n = _check_count(n)
    if not (np.isfinite(M) and M > 0):
        raise ValidationError(f"Fixed box needs M > 0, got {M}")
    return _cell_centered(float(M), n, "fixed_box")


def build_grid_expanding(n: int, d: int = 1) -> ReproductionGrid:
    """Grid on the expanding box [-n^(1/(2d)), n^(1/(2d))], h = 2 n^(-1/(2d))."""
    _check_dimension(d)
    n = _check_count(n)
    halfwidth = float(n) ** (1.0 / (2 * d))
    return _cell_centered(halfwidth, n, "expanding")


def default_grid(source: SourceSpec, n: int, mode: Optional[GridMode] = None, M: Optional[float] = None) -> ReproductionGrid:
    """
    Grid for a source: fixed box covering the support unless told otherwise.

    Every supported source has compact numerical support, so the fixed box is the
    default; M defaults to max(|a|, |b|) over the support [a, b].
    """
    if mode == "expanding":
        return build_grid_expanding(n)
    if M is None:
        a, b = source.support()
        M = max(abs(a), abs(b))
    return build_grid_fixed(M, n)


def project_to_grid(reference_nodes: np.ndarray, reference_weights: np.ndarray, grid: ReproductionGrid) -> np.ndarray:
    """
    Project a discrete reference measure onto the grid cells.

    Output entry j is the reference mass located in I_j. A location on an edge
    shared by two cells goes to the lower-index cell. Mass outside every cell is
    dropped and the result renormalized; when nothing is dropped the masses are
    returned as summed, without renormalization.

    Args:
        reference_nodes: Locations of the reference atoms.
        reference_weights: Nonnegative masses summing to 1.
        grid: Target grid.

    Returns:
        np.ndarray: Probability vector of length grid.n.

    Raises:
        ValidationError: If the reference is malformed.
        ProjectionError: If no mass lands inside the grid.
    """
    locations = np.asarray(reference_nodes, dtype=np.float64).ravel()
    weights = np.asarray(reference_weights, dtype=np.float64).ravel()
    if locations.shape != weights.shape:
        raise ValidationError("Reference nodes and weights must have the same length")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValidationError("Reference weights must be finite and nonnegative")
    if not np.all(np.isfinite(locations)):
        bad = int(np.flatnonzero(~np.isfinite(locations))[0])
        raise ValidationError(f"Reference location {bad} is {locations[bad]!r}, must be finite")

    edges = grid.edges
    cell = np.searchsorted(edges, locations, side="left") - 1
    cell[locations == edges[0]] = 0
    inside = (cell >= 0) & (cell < grid.n)

    projected = np.bincount(cell[inside], weights=weights[inside], minlength=grid.n)
    if not np.all(inside):
        retained = projected.sum()
        if not retained > 0:
            raise ProjectionError(f"No reference mass falls inside [{edges[0]}, {edges[-1]}]")
        dropped = weights[~inside].sum()
        logger.info(f"Projection dropped mass {dropped:.3e} outside the grid box; renormalizing")
        projected = projected / retained
    elif not projected.sum() > 0:
        raise ProjectionError("Reference carries no mass")
    return projected


def spread_to_grid(
    nodes: np.ndarray,
    weights: np.ndarray,
    grid: ReproductionGrid,
    floor: float = WARM_START_FLOOR,
) -> np.ndarray:
    """
    Spread a distribution on equidistant nodes over another grid, as a strictly positive start.

    The masses are read as a piecewise linear profile through the given nodes,
    sampled at the grid nodes (zero outside the given range), normalized and
    mixed with floor times the uniform distribution.

    Raises:
        ValidationError: If the inputs are malformed or floor is not in (0, 1).
    """
    nodes = np.asarray(nodes, dtype=np.float64).ravel()
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if nodes.shape != weights.shape or nodes.size == 0:
        raise ValidationError("Nodes and weights must be non-empty and of equal length")
    if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights))) or np.any(weights < 0):
        raise ValidationError("Nodes must be finite and weights finite and nonnegative")
    if not 0 < floor < 1:
        raise ValidationError(f"floor must be in (0, 1), got {floor}")

    if nodes.size == 1:
        profile = np.zeros(grid.n)
        profile[int(np.argmin(np.abs(grid.nodes - nodes[0])))] = 1.0
    else:
        profile = np.interp(grid.nodes, nodes, weights, left=0.0, right=0.0)
    total = profile.sum()
    if not total > 0:
        logger.info("No mass lands on the target grid; starting from uniform")
        return np.full(grid.n, 1.0 / grid.n)
    spread = (1.0 - floor) * profile / total + floor / grid.n
    return spread / spread.sum()
