"""Diagnostics shared by the class table and the typechecker."""

from __future__ import annotations

from .syntax import Span, TypeRepr


class TypingError(Exception):
    """A violated typing or well-formedness rule.

    ``rule`` is the rule label (``T-New``, ``WF-Override``, ...); ``kind``
    classifies the failure (``NonOcapNew``, ``MissingPermission``, ...).
    """

    def __init__(
        self,
        rule: str,
        kind: str,
        message: str,
        span: Span | None = None,
        expected: TypeRepr | None = None,
        actual: TypeRepr | None = None,
    ):
        super().__init__(message)
        self.rule = rule
        self.kind = kind
        self.message = message
        self.span = span
        self.expected = expected
        self.actual = actual

    def __str__(self) -> str:
        where = f"{self.span}: " if self.span else ""
        extra = ""
        if self.expected is not None or self.actual is not None:
            extra = f" (expected {self.expected}, found {self.actual})"
        return f"{where}[{self.rule}] {self.kind}: {self.message}{extra}"

    def to_record(self) -> dict:
        return {
            "rule": self.rule,
            "kind": self.kind,
            "message": self.message,
            "span": str(self.span) if self.span else None,
            "expected": None if self.expected is None else str(self.expected),
            "actual": None if self.actual is None else str(self.actual),
        }


class UnknownClass(TypingError):
    def __init__(self, name: str, span: Span | None = None, rule: str = "class table"):
        super().__init__(rule, "UnknownClass", f"unknown class '{name}'", span)
        self.name = name


class ProgramRejected(Exception):
    """Raised by :func:`typecheck_program` with every collected error."""

    def __init__(self, errors: list[TypingError]):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))

