"""Validation findings shared by dataset and prompt-config checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Severity(str, Enum):
    BLOCKING = "blocking"
    WARNING = "warning"
    INFO = "info"


@dataclass
class Finding:
    severity: Severity
    message: str

    def __str__(self) -> str:
        return f"[{self.severity.value}] {self.message}"


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    def add(self, severity: Severity, message: str) -> None:
        self.findings.append(Finding(severity, message))

    @property
    def is_ok(self) -> bool:
        """True iff no blocking finding was recorded."""
        return not any(f.severity is Severity.BLOCKING for f in self.findings)

    def messages(self, severity: Severity | None = None) -> list[str]:
        return [f.message for f in self.findings if severity is None or f.severity is severity]
