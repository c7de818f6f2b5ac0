import os
import logging
import sys
from typing import Optional, TextIO

LOG_ENV_VAR = "FRF_SHM_LOG"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

# Flag to ensure root logger is configured only once
_root_logger_configured = False


def _resolve_level(name: str) -> int:
    return LOG_LEVELS.get((name or "").strip().lower(), logging.INFO)


def _console_handler(stream: TextIO, min_level: int, below: Optional[int] = None) -> logging.Handler:
    handler = logging.StreamHandler(stream)
    handler.setLevel(min_level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    if below is not None:
        handler.addFilter(lambda record: record.levelno < below)
    return handler


def setup_logger(name: str) -> logging.Logger:
    """
    Returns the logger for `name`, configuring the root logger on first use.

    Records below WARNING go to stdout and the rest to stderr. The root level
    comes from FRF_SHM_LOG (error, warn, info, debug; default info).
    """
    global _root_logger_configured

    if not _root_logger_configured:
        root_logger = logging.getLogger()
        requested = os.getenv(LOG_ENV_VAR, "info")
        root_logger.setLevel(_resolve_level(requested))

        # drop handlers that libraries may have attached before us
        for handler in root_logger.handlers[:]:
            root_logger.removeHandler(handler)
        root_logger.addHandler(_console_handler(sys.stdout, logging.DEBUG, below=logging.WARNING))
        root_logger.addHandler(_console_handler(sys.stderr, logging.WARNING))

        _root_logger_configured = True
        if requested.strip().lower() not in LOG_LEVELS:
            logging.warning(f"Unknown {LOG_ENV_VAR} value {requested!r}, using info")

    return logging.getLogger(name)


def set_log_level(level_name: str) -> None:
    """Re-apply the root level, e.g. from a --log-level flag."""
    if level_name.strip().lower() not in LOG_LEVELS:
        raise ValueError(f"Unknown log level {level_name!r}; expected one of error, warn, info, debug")
    logging.getLogger().setLevel(_resolve_level(level_name))
