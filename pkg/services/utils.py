import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict

import numpy as np
import orjson
import pandas as pd

from numerics.errors import ValidationError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
SOLUTION_COLUMNS = ["j", "y", "r"]
LADDER_COLUMNS = ["n", "h", "value", "error_vs_ref", "ratio", "fitted_order"]
CURVE_COLUMNS = ["D", "R_nats", "beta", "converged", "iterations"]


def write_csv_atomic(frame: pd.DataFrame, path: Path) -> Path:
    """
    Write a DataFrame as CSV through a temporary file in the target directory.

    The temporary file is renamed over the target only after it is fully
    written, so readers never see a partial file.

    Args:
        frame (pd.DataFrame): Table to write; the index is not written.
        path (Path): Destination file.

    Returns:
        Path: The destination path.

    Raises:
        OSError: If the directory is not writable (logged and re-raised).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f"Failed to write {path}: {str(e)}")
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def _orjson_default(value: Any) -> Any:
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Cannot serialize {type(value).__name__} in a manifest")


def manifest_bytes(record: Dict[str, Any]) -> bytes:
    return orjson.dumps(
        record,
        default=_orjson_default,
        option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_APPEND_NEWLINE,
    )


def write_manifest(record: Dict[str, Any], path: Path) -> Path:
    """Write one sorted-key JSON record (one line, UTF-8) atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(manifest_bytes(record))
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f"Failed to write manifest {path}: {str(e)}")
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_manifest(path: Path) -> Dict[str, Any]:
    with open(path, "rb") as handle:
        return orjson.loads(handle.readline())


def solution_frame(nodes: np.ndarray, r: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"j": np.arange(len(r)), "y": nodes, "r": r}, columns=SOLUTION_COLUMNS)


def ladder_frame(report, with_oracle: bool = False) -> pd.DataFrame:
    """Ladder CSV table; fitted_order is repeated on every row and left empty when undefined."""
    order = report.fitted_order if report.order_defined else None
    data = {
        "n": [row.n for row in report.rows],
        "h": [row.h for row in report.rows],
        "value": [row.value for row in report.rows],
        "error_vs_ref": [row.error_vs_ref for row in report.rows],
        "ratio": [row.ratio_to_previous for row in report.rows],
        "fitted_order": [order] * len(report.rows),
    }
    columns = list(LADDER_COLUMNS)
    if with_oracle:
        data["oracle_error"] = [row.oracle_error for row in report.rows]
        columns.append("oracle_error")
    return pd.DataFrame(data, columns=columns).astype({c: "float64" for c in columns if c != "n"})


def curve_frame(rows) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "D": [row.D for row in rows],
            "R_nats": [row.rate for row in rows],
            "beta": [row.beta for row in rows],
            "converged": [str(bool(row.converged)).lower() for row in rows],
            "iterations": [int(row.iterations) for row in rows],
        },
        columns=CURVE_COLUMNS,
    )


def read_solution_csv(path: Path) -> pd.DataFrame:
    """Read a solution CSV back with exact double round-tripping."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != SOLUTION_COLUMNS:
        raise ValidationError(f"{path}: expected header {','.join(SOLUTION_COLUMNS)}, got {','.join(frame.columns)}")
    return frame


def manifest_path(csv_path: Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(f"{csv_path.stem}.manifest.jsonl")
