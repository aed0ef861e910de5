"""Repository of news articles and consolidated events.

The store is single-writer: every mutation goes through one lock and bumps
``revision``. Readers call :meth:`EventStore.snapshot` to get an immutable
view that later writes cannot disturb.

Snapshots persist as UTF-8 JSON lines::

    {"revision": 7, "articles": 2, "events": 1}
    {"kind": "article", "article_id": "a1", ...}
    {"kind": "event", "event_id": "...", ...}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

from .errors import DuplicateIdConflict, InvariantViolation, ParseError


@dataclass(frozen=True)
class NewsArticle:
    article_id: str
    source: str
    url: str
    published_at: int
    raw_title: str
    raw_body: str

    def problems(self) -> list[str]:
        out = []
        if not self.article_id:
            out.append("article_id must be non-empty")
        if self.published_at <= 0:
            out.append("published_at must be > 0")
        if not self.raw_body.strip():
            out.append("raw_body must be non-empty")
        return out

    def to_record(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_record(cls, rec: Mapping[str, Any], *, line: int | None = None) -> NewsArticle:
        return cls(
            article_id=_field(rec, "article_id", str, line),
            source=_field(rec, "source", str, line),
            url=_field(rec, "url", str, line),
            published_at=_field(rec, "published_at", int, line),
            raw_title=_field(rec, "raw_title", str, line),
            raw_body=_field(rec, "raw_body", str, line),
        )


@dataclass(frozen=True)
class Event:
    event_id: str
    title: str
    event_time: int
    fact: str
    locations: tuple[str, ...] = ()
    domain: str = "general"
    source_article_ids: tuple[str, ...] = ()
    news_count: int = 1
    model_score: float = 0.0
    last_update: int = 0

    def __post_init__(self) -> None:
        # accept lists from callers; store tuples so the record stays hashable/immutable
        object.__setattr__(self, "locations", tuple(self.locations))
        object.__setattr__(self, "source_article_ids", tuple(self.source_article_ids))

    def problems(self) -> list[str]:
        out = []
        if not self.event_id:
            out.append("event_id must be non-empty")
        if not self.title.strip():
            out.append("title must be non-empty")
        if not self.fact.strip():
            out.append("fact must be non-empty")
        distinct = len(dict.fromkeys(self.source_article_ids))
        if self.news_count != distinct:
            out.append(
                f"news_count ({self.news_count}) must equal the number of distinct "
                f"source_article_ids ({distinct})"
            )
        if self.news_count < 1:
            out.append("news_count must be >= 1")
        if not 0.0 <= self.model_score <= 1.0:
            out.append(f"model_score ({self.model_score}) must lie in [0, 1]")
        if self.last_update < self.event_time:
            out.append("last_update must be >= event_time")
        return out

    def to_record(self) -> dict[str, Any]:
        rec = dataclasses.asdict(self)
        rec["locations"] = list(self.locations)
        rec["source_article_ids"] = list(self.source_article_ids)
        return rec

    @classmethod
    def from_record(cls, rec: Mapping[str, Any], *, line: int | None = None) -> Event:
        return cls(
            event_id=_field(rec, "event_id", str, line),
            title=_field(rec, "title", str, line),
            event_time=_field(rec, "event_time", int, line),
            fact=_field(rec, "fact", str, line),
            locations=tuple(_str_list(rec, "locations", line)),
            domain=_field(rec, "domain", str, line),
            source_article_ids=tuple(_str_list(rec, "source_article_ids", line)),
            news_count=_field(rec, "news_count", int, line),
            model_score=float(_field(rec, "model_score", (int, float), line)),
            last_update=_field(rec, "last_update", int, line),
        )


def make_event_id(title: str, event_time: int, first_article_id: str) -> str:
    """Content hash used as the id of a freshly created event."""
    payload = json.dumps([title, int(event_time), first_article_id], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


def _field(rec: Mapping[str, Any], name: str, kind: Any, line: int | None) -> Any:
    if name not in rec:
        raise ParseError("missing field", line=line, field=name)
    value = rec[name]
    # bool is an int subclass; reject it for numeric fields
    if isinstance(value, bool) or not isinstance(value, kind):
        raise ParseError(f"unexpected type {type(value).__name__}", line=line, field=name)
    return value


def _str_list(rec: Mapping[str, Any], name: str, line: int | None) -> list[str]:
    value = _field(rec, name, list, line)
    if not all(isinstance(v, str) for v in value):
        raise ParseError("expected a list of strings", line=line, field=name)
    return value


@dataclass(frozen=True)
class StoreSnapshot:
    """Read-only view of a store at one revision."""

    revision: int
    articles: Mapping[str, NewsArticle] = field(default_factory=dict)
    events: Mapping[str, Event] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, (StoreSnapshot, EventStore)):
            return NotImplemented
        return (
            self.revision == other.revision
            and dict(self.articles) == dict(other.articles)
            and dict(self.events) == dict(other.events)
        )


class EventStore:
    def __init__(self) -> None:
        self._articles: dict[str, NewsArticle] = {}
        self._events: dict[str, Event] = {}
        self._article_event: dict[str, str] = {}
        self._revision = 0
        self._lock = threading.RLock()

    @property
    def revision(self) -> int:
        return self._revision

    @property
    def articles(self) -> Mapping[str, NewsArticle]:
        return MappingProxyType(self._articles)

    @property
    def events(self) -> Mapping[str, Event]:
        return MappingProxyType(self._events)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, EventStore):
            other = other.snapshot()
        if not isinstance(other, StoreSnapshot):
            return NotImplemented
        return self.snapshot() == other

    def __repr__(self) -> str:
        return (
            f"EventStore(revision={self._revision}, articles={len(self._articles)}, "
            f"events={len(self._events)})"
        )

    def snapshot(self) -> StoreSnapshot:
        with self._lock:
            return StoreSnapshot(
                revision=self._revision,
                articles=MappingProxyType(dict(self._articles)),
                events=MappingProxyType(dict(self._events)),
            )

    def get_event(self, event_id: str) -> Event | None:
        return self._events.get(event_id)

    def get_article(self, article_id: str) -> NewsArticle | None:
        return self._articles.get(article_id)

    def event_for_article(self, article_id: str) -> str | None:
        """Id of the event that already absorbed ``article_id``, if any."""
        return self._article_event.get(article_id)

    def put_article(self, article: NewsArticle) -> int:
        """Store ``article``; a bit-identical re-put is a no-op."""
        failed = article.problems()
        if failed:
            raise InvariantViolation(f"article {article.article_id!r}", failed)
        with self._lock:
            existing = self._articles.get(article.article_id)
            if existing is not None:
                if existing == article:
                    return self._revision
                raise DuplicateIdConflict(article.article_id)
            self._articles[article.article_id] = article
            self._revision += 1
            return self._revision

    def upsert_event(self, event: Event) -> int:
        """Insert or replace an event, keeping the newest ``last_update``."""
        failed = event.problems()
        missing = [a for a in event.source_article_ids if a not in self._articles]
        if missing:
            failed.append(f"source articles not in store: {', '.join(missing)}")
        if failed:
            raise InvariantViolation(f"event {event.event_id!r}", failed)
        with self._lock:
            existing = self._events.get(event.event_id)
            if existing is not None:
                if existing.last_update > event.last_update:
                    event = dataclasses.replace(event, last_update=existing.last_update)
                if existing == event:
                    return self._revision
            self._events[event.event_id] = event
            for article_id in event.source_article_ids:
                self._article_event.setdefault(article_id, event.event_id)
            self._revision += 1
            return self._revision

    @classmethod
    def from_snapshot(cls, snap: StoreSnapshot) -> EventStore:
        store = cls()
        store._articles = dict(snap.articles)
        store._events = dict(snap.events)
        for event in store._events.values():
            for article_id in event.source_article_ids:
                store._article_event.setdefault(article_id, event.event_id)
        store._revision = snap.revision
        return store


def dump_snapshot_lines(store: EventStore | StoreSnapshot) -> list[str]:
    snap = store.snapshot() if isinstance(store, EventStore) else store
    header = {"revision": snap.revision, "articles": len(snap.articles), "events": len(snap.events)}
    lines = [json.dumps(header)]
    for article in snap.articles.values():
        lines.append(json.dumps({"kind": "article", **article.to_record()}, ensure_ascii=False))
    for event in snap.events.values():
        lines.append(json.dumps({"kind": "event", **event.to_record()}, ensure_ascii=False))
    return lines


def save_snapshot(store: EventStore | StoreSnapshot, path: str | os.PathLike[str]) -> Path:
    """Write the store atomically (temp file + rename)."""
    path = Path(path)
    text = "\n".join(dump_snapshot_lines(store)) + "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def parse_snapshot(text: str) -> EventStore:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty snapshot, header missing", line=1)
    header = _json_line(lines[0], 1)
    revision = _field(header, "revision", int, 1)
    if revision < 0:
        raise ParseError("revision must be >= 0", line=1, field="revision")

    articles: dict[str, NewsArticle] = {}
    events: dict[str, Event] = {}
    seen_event = False
    for lineno, raw in enumerate(lines[1:], start=2):
        rec = _json_line(raw, lineno)
        kind = _field(rec, "kind", str, lineno)
        if kind == "article":
            if seen_event:
                raise ParseError("article record after event section", line=lineno, field="kind")
            article = NewsArticle.from_record(rec, line=lineno)
            if article.article_id in articles:
                raise ParseError("duplicate article_id", line=lineno, field="article_id")
            if article.problems():
                raise ParseError("; ".join(article.problems()), line=lineno)
            articles[article.article_id] = article
        elif kind == "event":
            seen_event = True
            event = Event.from_record(rec, line=lineno)
            if event.event_id in events:
                raise ParseError("duplicate event_id", line=lineno, field="event_id")
            if event.problems():
                raise ParseError("; ".join(event.problems()), line=lineno)
            missing = [a for a in event.source_article_ids if a not in articles]
            if missing:
                raise ParseError(
                    f"references missing articles {missing}", line=lineno, field="source_article_ids"
                )
            events[event.event_id] = event
        else:
            raise ParseError(f"unknown record kind {kind!r}", line=lineno, field="kind")

    # counts are optional in the header; when present they catch truncation at a line boundary
    for name, got in (("articles", len(articles)), ("events", len(events))):
        if name in header:
            want = _field(header, name, int, 1)
            if want != got:
                raise ParseError(
                    f"header declares {want} {name} but file holds {got} (truncated?)",
                    line=len(lines) + 1,
                    field=name,
                )
    return EventStore.from_snapshot(StoreSnapshot(revision, articles, events))


def load_snapshot(path: str | os.PathLike[str]) -> EventStore:
    return parse_snapshot(Path(path).read_text(encoding="utf-8"))


def _json_line(raw: str, lineno: int) -> dict[str, Any]:
    try:
        rec = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg} at column {exc.colno})", line=lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("expected a JSON object", line=lineno)
    return rec
