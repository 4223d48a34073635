"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ``ValidationError`` -> 1, ``OSError`` -> 2,
``InvariantViolation`` -> 3.
"""

from __future__ import annotations


class ValidationError(ValueError):
    """Input data or configuration does not satisfy a documented contract."""


class ParseError(ValidationError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class VersionError(ValidationError):
    pass


class UnsupportedCameraModelError(ValidationError):
    def __init__(self, model_name: str):
        self.model_name = model_name
        super().__init__(f"unsupported camera model {model_name!r} (supported: PINHOLE, SIMPLE_PINHOLE)")


class DanglingReferenceError(ValidationError):
    pass


class UnknownIdError(ValidationError, KeyError):
    def __str__(self) -> str:  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class TooFewCorrespondencesError(ValidationError):
    pass


class DegenerateConfigurationError(ValidationError):
    pass


class StaleCacheError(ValidationError):
    pass


class InvariantViolation(RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""
