"""Logging setup without circular imports"""

import logging
import os
from datetime import datetime
from typing import Optional

import colorlog

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "red,bg_white",
}
# Loggers under this prefix follow set_level
PACKAGE_PREFIX = "src"


def _log_file(log_dir: str) -> str:
    os.makedirs(log_dir, exist_ok=True)
    return os.path.join(log_dir, f"sceneflow_{datetime.now().strftime('%Y%m%d')}.log")


def setup_logger(name: str, log_level: Optional[str] = None, log_dir: Optional[str] = None) -> logging.Logger:
    """Colored console logger plus a daily file under `log_dir`.

    Level and directory default to SFUDA_LOG_LEVEL / SFUDA_LOG_DIR; an empty
    SFUDA_LOG_DIR keeps logging on the console only.
    """
    log_level = (log_level or os.getenv("SFUDA_LOG_LEVEL", "INFO")).upper()
    log_dir = os.getenv("SFUDA_LOG_DIR", "logs") if log_dir is None else log_dir

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, log_level, logging.INFO))

    # Prevent duplicate handlers
    if logger.handlers:
        return logger

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(colorlog.ColoredFormatter(
        f"%(log_color)s{LOG_FORMAT}", datefmt=DATE_FORMAT, log_colors=LOG_COLORS
    ))
    logger.addHandler(console_handler)

    if log_dir:
        file_handler = logging.FileHandler(_log_file(log_dir))
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(file_handler)

    logger.propagate = False
    return logger


def _redirect_file(logger: logging.Logger, log_dir: str):
    """Point the logger's file handler at `log_dir`; an empty `log_dir` drops it"""
    target = os.path.abspath(_log_file(log_dir)) if log_dir else None
    for handler in [h for h in logger.handlers if isinstance(h, logging.FileHandler)]:
        if handler.baseFilename == target:
            return
        logger.removeHandler(handler)
        handler.close()
    if target:
        file_handler = logging.FileHandler(target)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        logger.addHandler(file_handler)


def set_level(level: str, log_dir: Optional[str] = None):
    """Apply a level, and optionally a log directory, to every toolkit logger created so far"""
    value = getattr(logging, level.upper())
    for name, existing in list(logging.Logger.manager.loggerDict.items()):
        if name.split(".")[0] == PACKAGE_PREFIX and isinstance(existing, logging.Logger):
            existing.setLevel(value)
            if log_dir is not None:
                _redirect_file(existing, log_dir)
