"""Exception types raised across the pipeline."""

from __future__ import annotations


class SrlEnaError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(SrlEnaError, ValueError):
    """A trace, metadata or config file violates its schema."""

    def __init__(self, message: str, *, row: int | None = None, field: str | None = None):
        self.row = row
        self.field = field
        where = []
        if row is not None:
            where.append(f"row {row}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class ConfigError(SrlEnaError, ValueError):
    """An action config, pattern library or profile is invalid."""


class DegenerateRotationError(SrlEnaError, ValueError):
    """Group means coincide, so the means-rotation axis is undefined."""


class RankDeficiencyError(SrlEnaError, ValueError):
    """A design matrix is rank deficient or has too few observations."""


class StageError(SrlEnaError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
