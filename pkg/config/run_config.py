"""Run configuration: dotted-key YAML documents validated into pydantic models."""
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator
from pydantic import ValidationError as PydanticValidationError

from numerics.distortion import DistortionFn
from numerics.errors import ConfigError, ValidationError
from numerics.grids import ReproductionGrid, default_grid
from numerics.sources import Quadrature, SourceSpec, build_quadrature
from services.analysis import SolverTolerances, StudyMode

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SourceConfig(_Section):
    kind: Literal["uniform", "gaussian", "tabulated"]
    lo: Optional[float] = None
    hi: Optional[float] = None
    mean: float = 0.0
    stddev: float = 1.0
    truncation_halfwidth: Optional[float] = None
    nodes: Optional[List[float]] = None
    densities: Optional[List[float]] = None

    def build(self) -> SourceSpec:
        if self.kind == "uniform":
            if self.lo is None or self.hi is None:
                raise ValidationError("uniform source needs lo and hi")
            return SourceSpec.uniform(self.lo, self.hi)
        if self.kind == "gaussian":
            return SourceSpec.gaussian(self.mean, self.stddev, self.truncation_halfwidth)
        if not self.nodes or not self.densities:
            raise ValidationError("tabulated source needs nodes and densities")
        return SourceSpec.tabulated(self.nodes, self.densities)


class DistortionConfig(_Section):
    kind: Literal["squared_error", "absolute_error"] = "squared_error"


class GridConfig(_Section):
    mode: Literal["fixed_box", "expanding"] = "fixed_box"
    M: Optional[PositiveFloat] = None
    n: PositiveInt


class QuadratureConfig(_Section):
    m: PositiveInt = 300
    rule: Literal["midpoint", "trapezoid", "gauss_legendre_composite"] = "midpoint"


class BASettings(_Section):
    beta: float = Field(ge=0)


class CBASettings(_Section):
    D: PositiveFloat
    beta_lo: float = Field(default=1e-6, ge=0)
    beta_hi: PositiveFloat = 64.0
    ba_steps_per_beta: PositiveInt = 1

    @model_validator(mode="after")
    def _bracket_ordered(self) -> "CBASettings":
        if not self.beta_lo < self.beta_hi:
            raise ValueError(f"beta_lo={self.beta_lo} must be below beta_hi={self.beta_hi}")
        return self


class SolverConfig(_Section):
    ba: Optional[BASettings] = None
    cba: Optional[CBASettings] = None

    @model_validator(mode="after")
    def _exactly_one(self) -> "SolverConfig":
        if (self.ba is None) == (self.cba is None):
            raise ValueError("exactly one of solver.ba and solver.cba must be given")
        return self


class TolerancesConfig(_Section):
    objective: PositiveFloat = 1e-10
    kkt: PositiveFloat = 1e-6
    g: PositiveFloat = 1e-10
    max_iterations: PositiveInt = 100_000


class RunConfig(_Section):
    """
    One experiment: source, distortion, grid, quadrature and solver.

    Field names are the dotted keys of the YAML file, e.g. ``source.kind`` or
    ``solver.cba.D``.
    """
    source: SourceConfig
    distortion: DistortionConfig = DistortionConfig()
    grid: GridConfig
    quadrature: QuadratureConfig = QuadratureConfig()
    solver: SolverConfig
    tolerances: TolerancesConfig = TolerancesConfig()
    output_path: Optional[str] = None

    @property
    def mode(self) -> StudyMode:
        return "ba_fixed_beta" if self.solver.ba is not None else "cba_fixed_D"

    @property
    def parameter(self) -> float:
        return self.solver.ba.beta if self.solver.ba is not None else self.solver.cba.D

    def source_spec(self) -> SourceSpec:
        return self.source.build()

    def distortion_fn(self) -> DistortionFn:
        return DistortionFn.from_name(self.distortion.kind)

    def quadrature_for(self, source: SourceSpec) -> Quadrature:
        return build_quadrature(source, self.quadrature.m, self.quadrature.rule)

    def grid_for(self, source: SourceSpec, n: Optional[int] = None) -> ReproductionGrid:
        return default_grid(source, n or self.grid.n, mode=self.grid.mode, M=self.grid.M)

    def solver_tolerances(self) -> SolverTolerances:
        cba = self.solver.cba
        return SolverTolerances(
            objective=self.tolerances.objective,
            kkt=self.tolerances.kkt,
            g=self.tolerances.g,
            max_iterations=self.tolerances.max_iterations,
            beta_bracket=(cba.beta_lo, cba.beta_hi) if cba else (1e-6, 64.0),
            ba_steps_per_beta=cba.ba_steps_per_beta if cba else 1,
        )


def _flatten(node: yaml.Node, prefix: str, values: Dict[str, Any], lines: Dict[str, int], path: str) -> None:
    """Collect dotted keys from a YAML mapping node, recursing into nested mappings."""
    constructor = yaml.SafeLoader("")
    for key_node, value_node in node.value:
        line = key_node.start_mark.line + 1
        key = constructor.construct_object(key_node, deep=True)
        if not isinstance(key, str) or not key:
            raise ConfigError(f"keys must be non-empty strings, got {key!r}", line=line, path=path)
        dotted = f"{prefix}.{key}" if prefix else key
        if dotted in lines:
            raise ConfigError(f"{dotted}: duplicate key (first on line {lines[dotted]})", line=line, path=path)
        lines[dotted] = line
        if isinstance(value_node, yaml.MappingNode):
            _flatten(value_node, dotted, values, lines, path)
        else:
            values[dotted] = constructor.construct_object(value_node, deep=True)


def _unflatten(values: Dict[str, Any], lines: Dict[str, int], path: str) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for dotted, value in values.items():
        parts = dotted.split(".")
        cursor = tree
        for depth, part in enumerate(parts[:-1]):
            child = cursor.setdefault(part, {})
            if not isinstance(child, dict):
                prefix = ".".join(parts[: depth + 1])
                raise ConfigError(f"{prefix}: has both a value and sub-keys", line=lines[dotted], path=path)
            cursor = child
        if isinstance(cursor.get(parts[-1]), dict):
            raise ConfigError(f"{dotted}: has both a value and sub-keys", line=lines[dotted], path=path)
        cursor[parts[-1]] = value
    return tree


def _line_for(loc: Tuple[Any, ...], lines: Dict[str, int]) -> Optional[int]:
    """Line of the deepest configured key along a validation error location."""
    parts = [str(p) for p in loc if not isinstance(p, int)]
    while parts:
        dotted = ".".join(parts)
        if dotted in lines:
            return lines[dotted]
        nested = [line for key, line in lines.items() if key.startswith(dotted + ".")]
        if nested:
            return min(nested)
        parts.pop()
    return None


def parse_run_config(text: str, path: str = "<config>") -> RunConfig:
    """
    Parse and validate a run config document.

    Raises:
        ConfigError: With the file, line and dotted key of the first problem.
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(e, 'problem', None) or e}", line=mark.line + 1 if mark else None, path=path) from e
    if root is None:
        raise ConfigError("config is empty", path=path)
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError("config must be a mapping of dotted keys", line=root.start_mark.line + 1, path=path)

    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    _flatten(root, "", values, lines, path)
    tree = _unflatten(values, lines, path)

    try:
        config = RunConfig.model_validate(tree)
    except PydanticValidationError as e:
        errors = e.errors()
        for err in errors[1:]:
            logger.debug(f"{path}: {'.'.join(map(str, err['loc']))}: {err['msg']}")
        first = errors[0]
        dotted = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"{dotted}: {first['msg']}", line=_line_for(first["loc"], lines), path=path) from e

    # Domain checks the models cannot express (support bounds, quadrature size...)
    checks = [
        ("source", lambda: config.source_spec()),
        ("quadrature", lambda: config.quadrature_for(config.source_spec())),
        ("grid", lambda: config.grid_for(config.source_spec())),
    ]
    for section, build in checks:
        try:
            build()
        except ValidationError as e:
            raise ConfigError(f"{section}: {e}", line=_line_for((section,), lines), path=path) from e
    return config


def load_run_config(path: Path) -> RunConfig:
    """Read and validate a run config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read config {path}: {str(e)}")
        raise ConfigError(f"cannot read config: {e.strerror or e}", path=str(path)) from e
    config = parse_run_config(text, str(path))
    logger.info(f"Loaded run config {path}: {config.mode} parameter={config.parameter}")
    return config
