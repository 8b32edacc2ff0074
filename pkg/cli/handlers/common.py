import argparse
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from config.config import WORKERS
from config.run_config import RunConfig
from numerics.errors import ValidationError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def parse_float_list(text: Optional[str], flag: str) -> Optional[List[float]]:
    """Parse 'a,b,c' into floats; None when the flag was not given."""
    if text is None:
        return None
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ValidationError(f"{flag}: expected comma-separated numbers, got {text!r}") from e
    if not values:
        raise ValidationError(f"{flag}: empty list")
    return values


def parse_int_list(text: Optional[str], flag: str) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise ValidationError(f"{flag}: expected comma-separated integers, got {text!r}") from e
    if not values or any(v < 1 for v in values):
        raise ValidationError(f"{flag}: expected positive integers, got {text!r}")
    return values


def output_dir(args: argparse.Namespace, config: Optional[RunConfig]) -> Path:
    """--out wins over output_path from the config; the working directory is the fallback."""
    if getattr(args, "out", None):
        return Path(args.out)
    if config is not None and config.output_path:
        return Path(config.output_path)
    return Path(".")


def worker_count(args: argparse.Namespace) -> int:
    workers = getattr(args, "workers", None) or WORKERS
    if workers < 1:
        raise ValidationError(f"--workers must be >= 1, got {workers}")
    return workers


def base_manifest(command: str, config: RunConfig, config_path: str) -> Dict[str, Any]:
    """Every parameter needed to reproduce the command's output."""
    return {
        "command": command,
        "config_path": str(config_path),
        "config": config.model_dump(mode="json"),
        "mode": config.mode,
    }
