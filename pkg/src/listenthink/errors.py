"""Shared exception types."""

from __future__ import annotations


class ValidationError(ValueError):
    """Input data violates a structural or semantic constraint.

    Carries optional file/line context so CLI diagnostics can name the
    offending location.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.message = message
        self.path = path
        self.line = line
        super().__init__(self._format())

    def _format(self) -> str:
        prefix = ""
        if self.path is not None:
            prefix = self.path
            if self.line is not None:
                prefix += f":{self.line}"
            prefix += ": "
        return prefix + self.message


class AnnotationError(ValidationError):
    """A scenario annotation required by an operation is missing or malformed."""
