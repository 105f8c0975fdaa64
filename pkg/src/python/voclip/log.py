"""Line-oriented ``key=value`` logging.

Records carry their structured payload in ``extra={"fields": {...}}``::

    logger.info("step", extra={"fields": {"step": 1, "mse": 0.25}})

renders as ``level=INFO logger=voclip.training event=step step=1 mse=0.25``.
No timestamps are written so identical runs give identical logs.
"""

from __future__ import annotations

import logging
import sys
from typing import IO, Any, Mapping, Optional

ROOT_LOGGER = "voclip"


def format_value(value: Any) -> str:
    """Render one field value; floats use ``repr`` so they round-trip."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if not text or any(ch.isspace() for ch in text) or '"' in text or "=" in text:
        escaped = text.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return text


def format_fields(fields: Mapping[str, Any]) -> str:
    return " ".join(f"{key}={format_value(value)}" for key, value in fields.items())


class KeyValueFormatter(logging.Formatter):
    """Formats records as a single ``key=value`` line."""

    def format(self, record: logging.LogRecord) -> str:
        head = {
            "level": record.levelname,
            "logger": record.name,
            "event": record.getMessage(),
        }
        line = format_fields(head)
        fields = getattr(record, "fields", None)
        if fields:
            line = f"{line} {format_fields(fields)}"
        if record.exc_info:
            line = f"{line} error={format_value(repr(record.exc_info[1]))}"
        return line


def configure_logging(
    level: str = "INFO", stream: Optional[IO[str]] = None
) -> logging.Logger:
    """Install the key=value formatter on the package root logger."""
    logger = logging.getLogger(ROOT_LOGGER)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
    handler.setFormatter(KeyValueFormatter())
    logger.addHandler(handler)
    logger.setLevel(level.upper())
    logger.propagate = False
    return logger
