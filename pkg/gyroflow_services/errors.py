"""Exception hierarchy shared by the library and the command-line surface.

Every error carries a ``context`` mapping (file, line, pixel, field,
constraint, ...) so the CLI can print structured diagnostics, and an
``exit_code``: 1 for validation and format problems, 2 for numerical or
degenerate configurations.
"""

from __future__ import annotations

from typing import Any, Dict


class GyroflowError(Exception):
    exit_code = 1

    def __init__(self, message: str, **context: Any) -> None:
        super().__init__(message)
        self.context: Dict[str, Any] = {key: value for key, value in context.items() if value is not None}

    def to_payload(self) -> Dict[str, Any]:
        return {
            "status": "error",
            "kind": type(self).__name__,
            "error": str(self),
            "context": self.context,
        }


class ArgumentError(GyroflowError, ValueError):
    """Invalid argument combination or shape."""


class ConfigError(GyroflowError):
    """Project configuration failed validation."""


class FormatError(GyroflowError):
    """Input text or bytes do not follow the expected file format."""


class OrderingError(FormatError):
    """Timestamps are not strictly increasing."""


class LengthError(FormatError):
    """Binary payload is shorter or longer than its header declares."""


class InsufficientCoverageError(GyroflowError):
    """Gyro samples do not bracket the requested interval."""


class InvalidRotationError(GyroflowError):
    """Matrix is not a proper rotation within tolerance."""


class InvalidQuaternionError(GyroflowError):
    """Quaternion is not unit-norm within tolerance."""


class DecompositionError(GyroflowError):
    exit_code = 2


class DegenerateProjectionError(GyroflowError):
    exit_code = 2


class DegenerateConfigurationError(GyroflowError):
    exit_code = 2


__all__ = [
    "GyroflowError",
    "ArgumentError",
    "ConfigError",
    "FormatError",
    "OrderingError",
    "LengthError",
    "InsufficientCoverageError",
    "InvalidRotationError",
    "InvalidQuaternionError",
    "DecompositionError",
    "DegenerateProjectionError",
    "DegenerateConfigurationError",
]
