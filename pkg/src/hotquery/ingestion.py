"""Raw articles -> consolidated events.

Two stages per article: extraction (title, time, fact via a generation
backend) and consolidation (top-k similar events by fact embedding, pairwise
same-event classification, merge into the first match or create a new event).
"""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from . import prompts as P
from .backends import (
    Backends,
    EmbeddingBackend,
    GenerationBackend,
    RelationBackend,
    RelationVerdict,
)
from .errors import BackendError, BackendErrorKind, ExtractionRejected, HotQueryError, ParseError
from .event_store import Event, EventStore, NewsArticle, make_event_id
from .text import unsupported_sentences

logger = logging.getLogger(__name__)

DEFAULT_K = 5
SUPPORT_WINDOW = 8

__all__ = [
    "ExtractionResult",
    "IngestOutcome",
    "IngestionReport",
    "RelationVerdict",
    "SourceDecision",
    "SourcePolicy",
    "classify_relation",
    "consolidate",
    "extract_event",
    "filter_source",
    "find_merge_candidates",
    "merge_events",
    "read_articles",
]


@dataclass(frozen=True)
class SourcePolicy:
    allowed_sources: frozenset[str] = frozenset()
    blocked_sources: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        allowed = frozenset(s.lower() for s in self.allowed_sources)
        blocked = frozenset(s.lower() for s in self.blocked_sources)
        overlap = allowed & blocked
        if overlap:
            raise ValueError(f"sources both allowed and blocked: {sorted(overlap)}")
        object.__setattr__(self, "allowed_sources", allowed)
        object.__setattr__(self, "blocked_sources", blocked)


class SourceDecision(NamedTuple):
    accepted: bool
    reason: str | None = None


def filter_source(policy: SourcePolicy, article: NewsArticle) -> SourceDecision:
    source = article.source.lower()
    if source in policy.blocked_sources:
        return SourceDecision(False, f"source {article.source!r} is blocked")
    if policy.allowed_sources and source not in policy.allowed_sources:
        return SourceDecision(False, f"source {article.source!r} is not on the allow list")
    return SourceDecision(True)


@dataclass(frozen=True)
class ExtractionResult:
    title: str
    event_time: int
    fact: str
    locations: tuple[str, ...] = ()
    domain: str | None = None


def build_extraction_prompt(article: NewsArticle, prompts: P.PromptLibrary = P.DEFAULT_PROMPTS) -> str:
    payload = {
        "article_id": article.article_id,
        "source": article.source,
        "published_at": article.published_at,
        "title": article.raw_title,
        "body": article.raw_body,
    }
    return prompts.render("extract_event", article=P.json_block(payload))


def extract_event(
    backend: GenerationBackend,
    article: NewsArticle,
    *,
    strict: bool = True,
    window: int = SUPPORT_WINDOW,
    prompts: P.PromptLibrary = P.DEFAULT_PROMPTS,
) -> ExtractionResult:
    """Ask the backend for title/time/fact and validate the reply.

    In strict mode every fact sentence must share a ``window``-token run with
    the article body; anything else counts as invented content.
    """
    raw = backend.complete(build_extraction_prompt(article, prompts))
    try:
        reply = P.parse_json_object(raw)
    except ParseError as exc:
        raise BackendError(BackendErrorKind.MALFORMED, f"extraction reply: {exc}") from exc

    title = reply.get("title")
    fact = reply.get("fact")
    if not isinstance(title, str) or not title.strip():
        raise ExtractionRejected(article.article_id, "empty title")
    if not isinstance(fact, str) or not fact.strip():
        raise ExtractionRejected(article.article_id, "empty fact")

    when = reply.get("time")
    if when is None:
        event_time = article.published_at
    elif isinstance(when, (int, float)) and not isinstance(when, bool) and when > 0:
        event_time = int(when)
    else:
        raise ExtractionRejected(article.article_id, f"bad time {when!r}")

    locations = reply.get("locations") or []
    if not isinstance(locations, list) or not all(isinstance(x, str) for x in locations):
        raise ExtractionRejected(article.article_id, "locations must be a list of strings")
    domain = reply.get("domain")
    if domain is not None and not isinstance(domain, str):
        raise ExtractionRejected(article.article_id, "domain must be a string")

    if strict:
        bad = unsupported_sentences(fact, article.raw_body, window)
        if bad:
            raise ExtractionRejected(
                article.article_id, f"fact sentence not supported by the article: {bad[0]!r}"
            )
    return ExtractionResult(
        title=title.strip(),
        event_time=event_time,
        fact=fact.strip(),
        locations=tuple(x.strip() for x in locations if x.strip()),
        domain=domain or None,
    )


def find_merge_candidates(
    repo_events: Iterable[Event],
    incoming: ExtractionResult,
    embedder: EmbeddingBackend,
    k: int = DEFAULT_K,
    *,
    embed_cache: dict[str, np.ndarray] | None = None,
) -> list[tuple[Event, float]]:
    """Top-k events by fact-embedding inner product.

    Ties go to the more recently updated event, then to the smaller event_id.
    ``embed_cache`` (fact text -> vector) avoids re-embedding unchanged events.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    events = list(repo_events)
    if not events:
        return []
    cache = embed_cache if embed_cache is not None else {}
    missing = list(dict.fromkeys(e.fact for e in events if e.fact not in cache))
    if missing:
        for text, vec in zip(missing, embedder.embed(missing)):
            cache[text] = vec
    query = embedder.embed([incoming.fact])[0]
    matrix = np.stack([cache[e.fact] for e in events])
    sims = (matrix * query).sum(axis=1)
    order = sorted(range(len(events)), key=lambda i: (-sims[i], -events[i].last_update, events[i].event_id))
    return [(events[i], float(sims[i])) for i in order[:k]]


def classify_relation(backend: RelationBackend, a: ExtractionResult | Event, b: Event) -> RelationVerdict:
    if not a.fact.strip() or not b.fact.strip():
        raise ValueError("both sides need a non-empty fact")
    return RelationVerdict(backend.classify(a, b))


def merge_events(
    backend: GenerationBackend,
    base: Event,
    incoming: ExtractionResult,
    article_id: str,
    now: int,
    *,
    prompts: P.PromptLibrary = P.DEFAULT_PROMPTS,
) -> Event:
    """Fold ``incoming`` into ``base``; the event keeps its id."""
    records = {
        "base": {"title": base.title, "fact": base.fact},
        "incoming": {"title": incoming.title, "fact": incoming.fact},
    }
    raw = backend.complete(prompts.render("merge_events", records=P.json_block(records)))
    try:
        reply = P.parse_json_object(raw)
    except ParseError as exc:
        raise BackendError(BackendErrorKind.MALFORMED, f"merge reply: {exc}") from exc
    title = reply.get("title") or base.title
    fact = reply.get("fact")
    if not isinstance(title, str) or not isinstance(fact, str) or not fact.strip():
        raise BackendError(BackendErrorKind.MALFORMED, "merge reply lacks a usable title/fact")

    sources = base.source_article_ids
    if article_id not in sources:
        sources = (*sources, article_id)
    locations = tuple(dict.fromkeys((*base.locations, *incoming.locations)))
    return dataclasses.replace(
        base,
        title=title.strip(),
        fact=fact.strip(),
        locations=locations,
        source_article_ids=sources,
        news_count=len(sources),
        last_update=max(base.last_update, now),
    )


@dataclass(frozen=True)
class IngestOutcome:
    article_id: str
    outcome: str  # rejected | merged | created | error
    event_id: str | None = None
    detail: str | None = None

    def to_record(self) -> dict[str, str]:
        rec = {"article_id": self.article_id, "outcome": self.outcome}
        if self.event_id is not None:
            rec["event_id"] = self.event_id
        if self.detail is not None:
            rec["detail"] = self.detail
        return rec


@dataclass
class IngestionReport:
    outcomes: list[IngestOutcome] = field(default_factory=list)

    def count(self, outcome: str) -> int:
        return sum(1 for o in self.outcomes if o.outcome == outcome)

    @property
    def has_errors(self) -> bool:
        return any(o.outcome == "error" for o in self.outcomes)

    def lines(self) -> list[str]:
        return [json.dumps(o.to_record(), ensure_ascii=False) for o in self.outcomes]

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text("".join(line + "\n" for line in self.lines()), encoding="utf-8")
        return path


def read_articles(path: str | Path) -> list[NewsArticle]:
    """Load a line-delimited article batch (``kind`` is optional)."""
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
            if rec.get("kind", "article") != "article":
                continue
            out.append(NewsArticle.from_record(rec, line=lineno))
    return out


def consolidate(
    store: EventStore,
    policy: SourcePolicy,
    backends: Backends,
    batch: Sequence[NewsArticle],
    k: int = DEFAULT_K,
    *,
    strict: bool = True,
    default_model_score: float = 0.5,
    default_domain: str = "general",
    scorer: Callable[[Event], float] | None = None,
    workers: int = 1,
    prompts: P.PromptLibrary = P.DEFAULT_PROMPTS,
) -> IngestionReport:
    """Run extraction and consolidation over ``batch``.

    Extraction calls may fan out over ``workers`` threads; store writes are
    applied one article at a time in input order. The article's
    ``published_at`` is the event update time, so re-running a batch is
    deterministic. ``scorer`` supplies the influence score of new or merged
    events; without it new events get ``default_model_score`` and merges keep
    the base score.
    """
    report = IngestionReport()
    pending: list[NewsArticle] = []
    verdicts: dict[int, SourceDecision] = {}
    for pos, article in enumerate(batch):
        verdicts[pos] = filter_source(policy, article)
        if verdicts[pos].accepted and store.event_for_article(article.article_id) is None:
            pending.append(article)

    def _extract(article: NewsArticle) -> ExtractionResult | HotQueryError:
        try:
            return extract_event(backends.generator, article, strict=strict, prompts=prompts)
        except HotQueryError as exc:
            return exc

    first: dict[str, NewsArticle] = {}
    for article in pending:
        first.setdefault(article.article_id, article)
    unique = list(first.values())
    if workers > 1 and len(unique) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_extract, unique))
    else:
        results = [_extract(a) for a in unique]
    extracted = {(a.article_id, a): r for a, r in zip(unique, results)}

    cache: dict[str, np.ndarray] = {}
    for pos, article in enumerate(batch):
        aid = article.article_id
        if not verdicts[pos].accepted:
            report.outcomes.append(IngestOutcome(aid, "rejected", detail=verdicts[pos].reason))
            continue
        stored = store.get_article(aid)
        if stored is not None and stored != article:
            report.outcomes.append(IngestOutcome(aid, "error", detail="article_id reused with a different payload"))
            continue
        owner = store.event_for_article(aid)
        if owner is not None:
            report.outcomes.append(IngestOutcome(aid, "merged", owner, detail="already ingested"))
            continue

        result = extracted.get((aid, article))
        if result is None:
            # same id, different payload earlier in this batch
            report.outcomes.append(IngestOutcome(aid, "error", detail="article_id reused with a different payload"))
            continue
        if isinstance(result, ExtractionRejected):
            report.outcomes.append(IngestOutcome(aid, "rejected", detail=result.reason))
            continue
        if isinstance(result, HotQueryError):
            report.outcomes.append(IngestOutcome(aid, "error", detail=str(result)))
            continue
        try:
            report.outcomes.append(
                _apply(store, backends, article, result, k, cache, default_model_score, default_domain, scorer, prompts)
            )
        except (HotQueryError, ValueError) as exc:
            logger.warning("article %s failed: %s", aid, exc)
            report.outcomes.append(IngestOutcome(aid, "error", detail=str(exc)))
    return report


def _apply(
    store: EventStore,
    backends: Backends,
    article: NewsArticle,
    extraction: ExtractionResult,
    k: int,
    cache: dict[str, np.ndarray],
    default_model_score: float,
    default_domain: str,
    scorer: Callable[[Event], float] | None,
    prompts: P.PromptLibrary,
) -> IngestOutcome:
    now = article.published_at
    candidates = find_merge_candidates(store.events.values(), extraction, backends.embedder, k, embed_cache=cache)
    for event, _sim in candidates:
        if classify_relation(backends.relation, extraction, event) is RelationVerdict.SAME_EVENT:
            merged = merge_events(backends.generator, event, extraction, article.article_id, now, prompts=prompts)
            if scorer is not None:
                merged = dataclasses.replace(merged, model_score=float(scorer(merged)))
            store.put_article(article)
            store.upsert_event(merged)
            return IngestOutcome(article.article_id, "merged", merged.event_id)

    event = Event(
        event_id=make_event_id(extraction.title, extraction.event_time, article.article_id),
        title=extraction.title,
        event_time=extraction.event_time,
        fact=extraction.fact,
        locations=extraction.locations,
        domain=extraction.domain or default_domain,
        source_article_ids=(article.article_id,),
        news_count=1,
        model_score=default_model_score,
        last_update=max(extraction.event_time, now),
    )
    if scorer is not None:
        event = dataclasses.replace(event, model_score=float(scorer(event)))
    store.put_article(article)
    store.upsert_event(event)
    return IngestOutcome(article.article_id, "created", event.event_id)
