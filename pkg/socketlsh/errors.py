#!/usr/bin/env python3
# errors.py - Exception hierarchy shared by the library and the CLI

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_IO = 3


class SocketError(Exception):
    """Base class for every error raised by socketlsh."""

    exit_code = EXIT_BAD_INPUT
    error_type = "socket_error"


class ParameterError(SocketError, ValueError):
    """A parameter lies outside its domain (P, L, d, tau, k, grids...)."""

    error_type = "parameter_error"


class DimensionMismatchError(SocketError, ValueError):
    """Vector/matrix shapes or table counts disagree."""

    error_type = "dimension_mismatch"


class DomainError(SocketError, ValueError):
    """A quantity is mathematically undefined for the given input."""

    error_type = "domain_error"


class SelectionError(SocketError, ValueError):
    """Top-k selection has nothing (or too little) to select from."""

    error_type = "selection_error"


class FormatError(SocketError, ValueError):
    """Malformed SKT1/SKTI payload or mask sidecar."""

    error_type = "format_error"


class StorageError(SocketError, OSError):
    """Reading or writing a file failed."""

    exit_code = EXIT_IO
    error_type = "io_error"


class CheckFailure(SocketError):
    """One or more declared checks of a run did not pass."""

    exit_code = EXIT_CHECK_FAILED
    error_type = "check_failure"

    def __init__(self, message, failed=None):
        super().__init__(message)
        self.failed = list(failed or [])
