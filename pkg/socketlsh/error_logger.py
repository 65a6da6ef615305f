#!/usr/bin/env python3
# error_logger.py - Centralized structured JSON logging to stderr

import json
import sys
import traceback
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Tuple

from socketlsh.errors import EXIT_BAD_INPUT, EXIT_IO, SocketError
from socketlsh.settings import SOCKET_LOG_LEVEL

LEVELS = {"debug": 10, "info": 20, "warning": 30, "error": 40}


def _timestamp():
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _write(record):
    json.dump(record, sys.stderr, default=_json_default)
    sys.stderr.write("\n")
    sys.stderr.flush()


def _json_default(value):
    # numpy scalars and paths end up in contexts
    if hasattr(value, "item"):
        return value.item()
    return str(value)


def log_error(
    context: Dict[str, Any],
    error: Exception,
    error_type: Optional[str] = None,
    **extra
):
    """
    Log a structured error as JSON to stderr.

    Args:
        context: Dictionary with context info (command, path, operation, etc.)
        error: The exception that occurred
        error_type: Optional error classification; derived from the exception if omitted
        **extra: Additional fields to include in the error JSON
    """
    if error_type is None:
        error_type, _ = classify_error(error)

    details = None
    if error is not None and error.__traceback__ is not None:
        details = "".join(
            traceback.format_exception(type(error), error, error.__traceback__)
        )

    error_data = {
        "timestamp": _timestamp(),
        "level": "error",
        "context": context,
        "error": {
            "type": error_type,
            "message": str(error),
            "details": details,
        },
    }

    for key, value in extra.items():
        error_data[key] = value

    _write(error_data)


def log_event(event: str, level: str = "info", **fields):
    """Log a progress or check record, filtered by SOCKET_LOG_LEVEL."""
    threshold = LEVELS.get(SOCKET_LOG_LEVEL, LEVELS["info"])
    if LEVELS.get(level, LEVELS["info"]) < threshold:
        return
    record = {"timestamp": _timestamp(), "level": level, "event": event}
    record.update(fields)
    _write(record)


def classify_error(error: Exception) -> Tuple[str, int]:
    """
    Classify an exception into an error type and a CLI exit code.

    Returns:
        (error_type, exit_code)
    """
    if isinstance(error, SocketError):
        return error.error_type, error.exit_code

    if isinstance(error, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return "io_error", EXIT_IO
    if isinstance(error, OSError):
        return "io_error", EXIT_IO

    if isinstance(error, (ValueError, TypeError, KeyError)):
        return "invalid_input", EXIT_BAD_INPUT

    return "unknown_error", EXIT_BAD_INPUT
