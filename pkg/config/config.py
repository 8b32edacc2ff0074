import logging
import os
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_LEVEL = os.getenv("RD_LOG_LEVEL", "INFO").upper()
LOG_FILE = os.getenv("RD_LOG_FILE")  # unset -> console only
WORKERS = int(os.getenv("RD_WORKERS", "1"))
PROGRESS_EVERY = int(os.getenv("RD_PROGRESS_EVERY", "1000"))


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """
    Configure root logging for command-line runs.

    Args:
        level: Level name overriding RD_LOG_LEVEL.
        log_file: Path overriding RD_LOG_FILE; console output is always kept.
    """
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    log_file = log_file or LOG_FILE
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        format=LOG_FORMAT,
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        handlers=handlers,
        force=True,
    )
