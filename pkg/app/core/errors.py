from typing import Optional


class AuditError(ValueError):
    """Base class for every error raised by the audit toolkit."""


class UsageError(AuditError):
    """The caller asked for something the toolkit cannot do (exit status 1)."""


class DataError(AuditError):
    """The input data violates a requirement of the requested analysis (exit status 2)."""


# --- Usage errors ---
class UnsupportedMetric(UsageError):
    pass


class MetricMismatch(UsageError):
    pass


# --- Data errors ---
class EmptyShadow(DataError):
    pass


class UnknownMembership(DataError):
    pass


class DegenerateBins(DataError):
    pass


class NoMembers(DataError):
    pass


class FewerThanTwoClasses(DataError):
    pass


class EmptySweep(DataError):
    pass


class ParseError(DataError):
    """
    A prediction file could not be parsed.
    Carries the 1-based line number of the offending line when it is known.
    """
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class InvariantViolation(DataError):
    """A record parsed correctly but breaks a PredictionRecord invariant."""
    def __init__(self, message: str, row_id: Optional[str] = None):
        self.row_id = row_id
        prefix = f"row {row_id}: " if row_id is not None else ""
        super().__init__(f"{prefix}{message}")


class ClassCountMismatch(DataError):
    pass
