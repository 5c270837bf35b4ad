"""Exception hierarchy shared by services and the CLI.

Every error carries the process exit code the CLI reports for it:
0 success, 2 I/O, 3 config/parse, 4 numerical failure.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4


class Her2PssError(Exception):
    exit_code: int = EXIT_UNEXPECTED


class InputOutputError(Her2PssError, OSError):
    exit_code = EXIT_IO


class ConfigError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG


class ParseError(Her2PssError, ValueError):
    """Malformed input row. `line` is 1-based when known."""

    exit_code = EXIT_CONFIG

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        location = ""
        if path is not None:
            location = f"{path}:"
        if line is not None:
            location = f"{location}{line}:"
        super().__init__(f"{location} {message}" if location else message)
        self.path = path
        self.line = line


class FormatError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG


class DegenerateInputError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG


class ShapeError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG


class ArityError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG


class DomainError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG


class CapacityError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG


class NumericalError(Her2PssError, ArithmeticError):
    exit_code = EXIT_NUMERICAL


class TrainingDivergedError(NumericalError):
    pass


class MalformedRecordError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG


class DuplicateRecordError(Her2PssError, ValueError):
    exit_code = EXIT_CONFIG
