"""Structured error handling for the crossfit engine.

Provides a centralized error code enum, one exception class carrying a stable
code, and helpers that render errors as machine-readable JSON in the shape
``{"error": {"code": "...", "message": "...", "details": ...}}`` and map them
onto CLI exit codes.
"""

from enum import IntEnum, StrEnum
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    from .spec import ValidationReport


class ErrorCode(StrEnum):
    """Machine-readable error codes raised by the engine."""

    INVALID_DATA = "INVALID_DATA"
    UNKNOWN_COLUMN = "UNKNOWN_COLUMN"
    ROW_OUT_OF_RANGE = "ROW_OUT_OF_RANGE"
    INVALID_NUISANCE = "INVALID_NUISANCE"
    INVALID_METHOD = "INVALID_METHOD"
    INVALID_FOLDS = "INVALID_FOLDS"
    INFEASIBLE_ALLOCATION = "INFEASIBLE_ALLOCATION"
    AGGREGATION_ERROR = "AGGREGATION_ERROR"
    LEARNER_ERROR = "LEARNER_ERROR"
    TARGET_ERROR = "TARGET_ERROR"
    LEAKAGE_DETECTED = "LEAKAGE_DETECTED"
    CONFIG_ERROR = "CONFIG_ERROR"
    IO_ERROR = "IO_ERROR"
    UNKNOWN_METHOD = "UNKNOWN_METHOD"


class ExitCode(IntEnum):
    """Process exit codes of the command-line front end."""

    OK = 0
    VALIDATION_FAILED = 2
    PARTIAL_FAILURE = 3
    IO_FAILURE = 4


class CrossfitError(Exception):
    """Engine-level error with a stable code.

    Args:
        code: A stable machine-readable error code from ``ErrorCode``.
        message: A human-readable description of the error.
        details: Optional structured context (offending row, column, node, ...).
    """

    code: ErrorCode
    message: str
    details: dict[str, Any]

    def __init__(
        self, code: ErrorCode, message: str, details: dict[str, Any] | None = None
    ) -> None:
        """Initialize the error with its code, message, and details."""
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(message)


class SpecificationError(CrossfitError):
    """Raised when a method fails validation; carries the full report."""

    report: "ValidationReport"

    def __init__(self, report: "ValidationReport") -> None:
        """Summarize the report's violations into the error message."""
        self.report = report
        super().__init__(
            ErrorCode.INVALID_METHOD,
            "; ".join(report.violations),
            {"violations": list(report.violations)},
        )


_EXIT_CODES: dict[ErrorCode, ExitCode] = {
    ErrorCode.IO_ERROR: ExitCode.IO_FAILURE,
    ErrorCode.INVALID_DATA: ExitCode.IO_FAILURE,
}


def exit_code_for(code: ErrorCode) -> ExitCode:
    """Return the CLI exit code for an error code (validation failure unless I/O)."""
    return _EXIT_CODES.get(code, ExitCode.VALIDATION_FAILED)


def error_body(error: CrossfitError) -> dict[str, Any]:
    """Build the canonical JSON error body."""
    body: dict[str, Any] = {"code": str(error.code), "message": error.message}
    if error.details:
        body["details"] = error.details
    return {"error": body}
