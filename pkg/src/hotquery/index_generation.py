"""Generative query indexing for hot events.

For each hot event a generation backend reasons about the event's key
entities and writes user-style queries in three patterns (factual
statements, search-box phrases, questions). A second pass drops queries that
lose touch with the event. Surviving queries are embedded and stay active
while their event was updated within the TTL window.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import prompts as P
from .backends import EmbeddingBackend, GenerationBackend
from .errors import BackendError, BackendErrorKind, HotQueryError, ParseError
from .event_store import Event
from .text import normalize_space

SEVEN_DAYS = 604800


class Pattern(str, Enum):
    FACTUAL = "Factual"
    SEARCH = "Search"
    QUESTION = "Question"

    @property
    def header(self) -> str:
        return f"{self.value} queries"


PATTERN_ORDER = (Pattern.FACTUAL, Pattern.SEARCH, Pattern.QUESTION)
REASON_HEADER = "Reason"
FILTER_HEADER = "Filter queries"

_PATTERN_STEPS = {
    Pattern.FACTUAL: (
        "Factual queries: write {n} short factual statements about the event, the way users "
        "type keyword-style searches. Vary the sentence structure and the order of entities, "
        "do not repeat information, and make sure each one would find this event."
    ),
    Pattern.SEARCH: (
        "Search queries: building on the factual statements, write {n} search-style phrases. "
        "Every one must be an interrogative sentence in natural user wording, each with a "
        "different structure."
    ),
    Pattern.QUESTION: (
        "Question queries: building on the factual statements, write {n} questions a user "
        "might ask a chat assistant about the event."
    ),
}


@dataclass(frozen=True)
class GenerationSpec:
    n_factual: int = 30
    n_search: int = 10
    n_question: int = 6
    ttl_seconds: int = SEVEN_DAYS

    def __post_init__(self) -> None:
        if min(self.n_factual, self.n_search, self.n_question) < 0:
            raise ValueError("pattern counts must be >= 0")
        if self.ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be > 0")

    def count(self, pattern: Pattern) -> int:
        return {
            Pattern.FACTUAL: self.n_factual,
            Pattern.SEARCH: self.n_search,
            Pattern.QUESTION: self.n_question,
        }[pattern]

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> GenerationSpec:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown generation settings: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in data.items()})


@dataclass(frozen=True)
class IndexQuery:
    index_id: str
    event_id: str
    text: str
    pattern: Pattern
    created_at: int
    event_last_update: int
    embedding: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("index query text must be non-empty")
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if self.embedding is not None:
            emb = tuple(float(x) for x in self.embedding)
            norm = math.sqrt(math.fsum(x * x for x in emb))
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"index {self.index_id}: embedding norm {norm} is not 1")
            object.__setattr__(self, "embedding", emb)

    def to_record(self) -> dict[str, Any]:
        return {
            "index_id": self.index_id,
            "event_id": self.event_id,
            "text": self.text,
            "pattern": self.pattern.value,
            "created_at": self.created_at,
            "event_last_update": self.event_last_update,
            "embedding": list(self.embedding) if self.embedding is not None else None,
        }

    @classmethod
    def from_record(cls, rec: Mapping[str, Any], *, line: int | None = None) -> IndexQuery:
        try:
            emb = rec.get("embedding")
            return cls(
                index_id=str(rec["index_id"]),
                event_id=str(rec["event_id"]),
                text=str(rec["text"]),
                pattern=Pattern(rec["pattern"]),
                created_at=int(rec["created_at"]),
                event_last_update=int(rec["event_last_update"]),
                embedding=tuple(emb) if emb is not None else None,
            )
        except KeyError as exc:
            raise ParseError("missing field", line=line, field=exc.args[0]) from None
        except (TypeError, ValueError) as exc:
            raise ParseError(str(exc), line=line) from None


def make_index_id(event_id: str, pattern: Pattern, text: str) -> str:
    payload = json.dumps([event_id, Pattern(pattern).value, text], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:20]


def event_info(event: Event) -> str:
    return P.format_event_info(event.title, event.event_time, event.locations, event.fact)


def build_generation_request(
    event: Event, spec: GenerationSpec, prompts: P.PromptLibrary = P.DEFAULT_PROMPTS
) -> str:
    steps, headers = [], [f"{{{REASON_HEADER}}}"]
    step = 2
    for pattern in PATTERN_ORDER:
        n = spec.count(pattern)
        if n == 0:
            continue
        steps.append(f"{step}. " + _PATTERN_STEPS[pattern].format(n=n))
        headers.append(f"{{{pattern.header}}}")
        step += 1
    output = "\n".join(headers) + "\nPut one query per line under each header."
    return prompts.render(
        "index_generation",
        event_info=event_info(event),
        pattern_steps="\n".join(steps),
        output_format=output,
    )


@dataclass
class ParsedGeneration:
    reason: str = ""
    queries: dict[Pattern, list[str]] = field(default_factory=dict)

    @property
    def factual(self) -> list[str]:
        return self.queries.get(Pattern.FACTUAL, [])

    @property
    def search(self) -> list[str]:
        return self.queries.get(Pattern.SEARCH, [])

    @property
    def question(self) -> list[str]:
        return self.queries.get(Pattern.QUESTION, [])


_HEADER_RE = re.compile(r"^[#*\s]*\{([^{}]+)\}[*:\s]*$")
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")


def _header_name(line: str) -> str | None:
    m = _HEADER_RE.match(line)
    return m.group(1).strip() if m else None


def _clean_item(line: str) -> str:
    item = _BULLET_RE.sub("", line).strip()
    if len(item) >= 2 and item[0] == item[-1] and item[0] in "\"'":
        item = item[1:-1].strip()
    return normalize_space(item)


def _sections(raw: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in raw.splitlines():
        name = _header_name(line)
        if name is not None:
            current = name
            sections.setdefault(current, [])
            continue
        if current is not None and line.strip():
            sections[current].append(line)
    return sections


def parse_generation_response(raw: str, spec: GenerationSpec) -> ParsedGeneration:
    """Split a generation reply into its labeled sections.

    Lists are de-duplicated (first occurrence wins) and capped at the ``GenerationSpec``
    counts. Unknown sections are ignored.
    """
    sections = _sections(raw)
    required = [REASON_HEADER] + [p.header for p in PATTERN_ORDER if spec.count(p) > 0]
    for name in required:
        if name not in sections:
            raise ParseError(f"missing section header {{{name}}}", field=name)
    parsed = ParsedGeneration(reason="\n".join(s.strip() for s in sections[REASON_HEADER]))
    for pattern in PATTERN_ORDER:
        cap = spec.count(pattern)
        items = [_clean_item(line) for line in sections.get(pattern.header, [])]
        unique = list(dict.fromkeys(i for i in items if i))
        parsed.queries[pattern] = unique[:cap]
    return parsed


def build_filter_request(
    event: Event, queries: Sequence[str], prompts: P.PromptLibrary = P.DEFAULT_PROMPTS
) -> str:
    return prompts.render(
        "post_filter",
        event_info=event_info(event),
        candidates="\n".join(f"- {q}" for q in queries),
    )


def post_filter(
    backend: GenerationBackend,
    event: Event,
    queries: Sequence[str],
    prompts: P.PromptLibrary = P.DEFAULT_PROMPTS,
) -> list[str]:
    """Keep the queries the backend approves; never rewrites, order preserved."""
    if not queries:
        raise ValueError("post_filter needs at least one query")
    raw = backend.complete(build_filter_request(event, queries, prompts))
    sections = _sections(raw)
    lines = sections.get(FILTER_HEADER, raw.splitlines() if not sections else [])
    approved = {_clean_item(line) for line in lines}
    return [q for q in queries if q in approved]


def generate_indexes(
    backend: GenerationBackend,
    embedder: EmbeddingBackend,
    event: Event,
    spec: GenerationSpec,
    now: int,
    *,
    filter_backend: GenerationBackend | None = None,
    prompts: P.PromptLibrary = P.DEFAULT_PROMPTS,
) -> list[IndexQuery]:
    """Generate, filter and embed the index queries of one event."""
    try:
        raw = backend.complete(build_generation_request(event, spec, prompts))
        parsed = parse_generation_response(raw, spec)
        flat = [(p, q) for p in PATTERN_ORDER for q in parsed.queries.get(p, [])]
        if not flat:
            return []
        texts = list(dict.fromkeys(q for _, q in flat))
        kept = set(post_filter(filter_backend or backend, event, texts, prompts))
        flat = [(p, q) for p, q in flat if q in kept]
        if not flat:
            return []
        vectors = embedder.embed([q for _, q in flat])
    except HotQueryError as exc:
        raise _with_event(exc, event.event_id)
    if len(vectors) != len(flat):
        raise BackendError(BackendErrorKind.MALFORMED, f"event {event.event_id}: embedding count mismatch")

    out = []
    for (pattern, text), vec in zip(flat, vectors):
        out.append(
            IndexQuery(
                index_id=make_index_id(event.event_id, pattern, text),
                event_id=event.event_id,
                text=text,
                pattern=pattern,
                created_at=now,
                event_last_update=event.last_update,
                embedding=tuple(float(x) for x in vec),
            )
        )
    return out


def _with_event(exc: HotQueryError, event_id: str) -> HotQueryError:
    # same exception type, message prefixed with the event it concerns
    exc.args = (f"event {event_id}: {exc}",)
    exc.event_id = event_id  # type: ignore[attr-defined]
    return exc


def generate_all(
    backend: GenerationBackend,
    embedder: EmbeddingBackend,
    events: Iterable[Event],
    spec: GenerationSpec,
    now: int,
    *,
    filter_backend: GenerationBackend | None = None,
    workers: int = 1,
    prompts: P.PromptLibrary = P.DEFAULT_PROMPTS,
) -> list[IndexQuery]:
    """Index queries for many events in a deterministic order.

    Events may be processed concurrently; the output is ordered by event_id,
    then pattern, then position within the pattern.
    """
    ordered = sorted(events, key=lambda e: e.event_id)

    def one(event: Event) -> list[IndexQuery]:
        return generate_indexes(
            backend, embedder, event, spec, now, filter_backend=filter_backend, prompts=prompts
        )

    if workers > 1 and len(ordered) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(one, ordered))
    else:
        batches = [one(e) for e in ordered]
    rank = {p: i for i, p in enumerate(PATTERN_ORDER)}
    out = []
    for batch in batches:
        # stable sort keeps within-pattern position
        out.extend(sorted(batch, key=lambda q: rank[q.pattern]))
    return out


def is_active(index: IndexQuery, now: int, ttl_seconds: int) -> bool:
    return now - index.event_last_update < ttl_seconds


def active_indexes(indexes: Iterable[IndexQuery], now: int, ttl_seconds: int = SEVEN_DAYS) -> list[IndexQuery]:
    """Indexes whose event was updated less than ``ttl_seconds`` before ``now``."""
    return [q for q in indexes if is_active(q, now, ttl_seconds)]


def save_indexes(indexes: Iterable[IndexQuery], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(json.dumps(q.to_record(), ensure_ascii=False) + "\n" for q in indexes)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
    return path


def load_indexes(path: str | Path) -> list[IndexQuery]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("expected a JSON object", line=lineno)
            out.append(IndexQuery.from_record(rec, line=lineno))
    return out
