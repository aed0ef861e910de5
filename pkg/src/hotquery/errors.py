"""Exception types shared across the package."""

from __future__ import annotations

from enum import Enum


class HotQueryError(Exception):
    """Base class for every error raised by hotquery."""


class DuplicateIdConflict(HotQueryError):
    def __init__(self, article_id: str) -> None:
        super().__init__(f"article {article_id!r} already stored with a different payload")
        self.article_id = article_id


class InvariantViolation(HotQueryError, ValueError):
    """A record failed validation. ``failed`` lists every broken rule."""

    def __init__(self, subject: str, failed: list[str]) -> None:
        super().__init__(f"{subject}: " + "; ".join(failed))
        self.subject = subject
        self.failed = list(failed)


class ParseError(HotQueryError, ValueError):
    """Malformed input text (snapshot lines, LLM responses, record files)."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None) -> None:
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class BackendErrorKind(str, Enum):
    TIMEOUT = "Timeout"
    MALFORMED = "Malformed"
    UNAVAILABLE = "Unavailable"


class BackendError(HotQueryError):
    def __init__(self, kind: BackendErrorKind, detail: str) -> None:
        super().__init__(f"{kind.value}: {detail}")
        self.kind = BackendErrorKind(kind)
        self.detail = detail
        self.event_id: str | None = None


class ExtractionRejected(HotQueryError):
    def __init__(self, article_id: str, reason: str) -> None:
        super().__init__(f"extraction for {article_id!r} rejected: {reason}")
        self.article_id = article_id
        self.reason = reason


class DimensionMismatch(HotQueryError, ValueError):
    def __init__(self, message: str, index_ids: list[str] | None = None) -> None:
        ids = list(index_ids or [])
        if ids:
            message = f"{message} (offending: {', '.join(ids)})"
        super().__init__(message)
        self.index_ids = ids


class MissingEvent(HotQueryError, LookupError):
    """A retrieval candidate points at an event the store does not hold."""

    def __init__(self, event_id: str) -> None:
        super().__init__(f"event {event_id!r} referenced by the index is missing from the store")
        self.event_id = event_id


class LengthMismatch(HotQueryError, ValueError):
    def __init__(self, left: int, right: int) -> None:
        super().__init__(f"length mismatch: {left} != {right}")


class ConfigError(HotQueryError):
    pass


class StoreLocked(HotQueryError):
    pass
