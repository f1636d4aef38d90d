"""Structured logging for batch runs and the command line.

Bridges stdlib ``logging`` into ``structlog`` so every log line leaves the
process on stderr as a single JSON document (or a coloured console line when
``CROSSFIT_LOG_FORMAT=console``). Stdout stays reserved for command output.
"""

import logging
import sys
from typing import Any

import structlog

from .config import LOG_FORMAT, LOG_LEVEL


def configure_logging(level: str | None = None) -> None:
    """Configure structlog + stdlib logging to emit to stderr.

    Call once at process startup, before any logger is used. ``level``
    overrides ``CROSSFIT_LOG_LEVEL``.
    """
    timestamper: structlog.processors.TimeStamper = structlog.processors.TimeStamper(fmt="iso")
    shared_processors: list[Any] = [
        structlog.contextvars.merge_contextvars,
        structlog.stdlib.add_logger_name,
        structlog.stdlib.add_log_level,
        timestamper,
    ]

    structlog.configure(
        processors=[
            *shared_processors,
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    renderer: Any = (
        structlog.dev.ConsoleRenderer()
        if LOG_FORMAT == "console"
        else structlog.processors.JSONRenderer()
    )
    formatter: structlog.stdlib.ProcessorFormatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=shared_processors,
        processors=[
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            renderer,
        ],
    )

    handler: logging.StreamHandler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)

    root: logging.Logger = logging.getLogger()
    root.handlers = [handler]
    root.setLevel((level or LOG_LEVEL).upper())


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    """Return a structlog logger bound to ``name``."""
    return structlog.stdlib.get_logger(name)
