from __future__ import annotations

import enum
import os
from dataclasses import dataclass


class Severity(enum.Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int
    length: int = 1

    def __post_init__(self):
        if self.line < 1 or self.column < 1 or self.length < 1:
            raise ValueError(f"invalid span {self}")


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    span: SourceSpan
    message: str
    code: str

    @property
    def is_error(self) -> bool:
        return self.severity is Severity.ERROR

    def render(self, filename: str = "<input>", color: bool | None = None) -> str:
        if color is None:
            color = os.environ.get("APV_COLOR", "0") == "1"
        sev = self.severity.value
        if color:
            sev = ("\x1b[31m" if self.is_error else "\x1b[33m") + sev + "\x1b[0m"
        return f"{filename}:{self.span.line}:{self.span.column}: {sev}[{self.code}]: {self.message}"


def error(span: SourceSpan, message: str, code: str) -> Diagnostic:
    return Diagnostic(Severity.ERROR, span, message, code)


def warning(span: SourceSpan, message: str, code: str) -> Diagnostic:
    return Diagnostic(Severity.WARNING, span, message, code)


class DiagnosticError(Exception):
    """Raised when an input is rejected; carries every error found."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = list(diagnostics)
        first = next((d for d in self.diagnostics if d.is_error), None)
        super().__init__(first.message if first else "rejected input")

    @property
    def codes(self) -> list[str]:
        return [d.code for d in self.diagnostics if d.is_error]
