"""Online trending-query detection: retrieve, gate, then rerank.

A user turn becomes a :class:`CompositeQuery` holding the rewritten intent
query (used for retrieval), the current turn and up to two earlier turns
(shown to the reranker). The cascade exits early when no index query clears
the retrieval threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Protocol, Sequence

from .backends import Backends, RewriteBackend
from .errors import MissingEvent
from .event_store import Event
from .prompts import format_time
from .retrieval import Candidate, RetrievalIndex, gate, search

HISTORY_TURNS = 2


class Mode(str, Enum):
    RETRIEVAL_ONLY = "RetrievalOnly"
    TWO_STAGE = "TwoStage"


class DecidedBy(str, Enum):
    RETRIEVAL_GATE = "RetrievalGate"
    RERANKER = "Reranker"
    RETRIEVAL_ONLY = "RetrievalOnlyMode"


@dataclass(frozen=True)
class DetectionConfig:
    k: int = 1
    retrieval_threshold: float = 0.5
    rerank_threshold: float = 0.5
    mode: Mode = Mode.TWO_STAGE
    # also show the rewritten query to the reranker
    include_rewrite: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("retrieval_threshold", "rerank_threshold"):
            value = getattr(self, name)
            if value != value or value in (float("inf"), float("-inf")):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "mode", Mode(self.mode))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> DetectionConfig:
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown detection settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class CompositeQuery:
    q_r: str
    q_o: str
    q_h: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.q_o.strip():
            raise ValueError("q_o must be non-empty")
        object.__setattr__(self, "q_h", tuple(self.q_h))


@dataclass(frozen=True)
class DetectionResult:
    trending: bool
    decided_by: DecidedBy
    event_id: str | None = None
    matched_index_id: str | None = None
    retrieval_similarity: float | None = None
    rerank_probability: float | None = None
    generation: int | None = None

    def __post_init__(self) -> None:
        if self.trending and self.event_id is None:
            raise ValueError("a trending verdict needs an event_id")


class EventLookup(Protocol):
    @property
    def events(self) -> Mapping[str, Event]: ...


def compose_query(rewriter: RewriteBackend, q_h: Sequence[str], q_o: str) -> CompositeQuery:
    if not q_o.strip():
        raise ValueError("q_o must be non-empty")
    history = tuple(q_h)[-HISTORY_TURNS:]
    return CompositeQuery(q_r=rewriter.rewrite(list(q_h), q_o), q_o=q_o, q_h=history)


def serialize_for_rerank(
    query: CompositeQuery, event: Event, matched_index: str, *, include_rewrite: bool = False
) -> tuple[str, str]:
    """Fixed ``label: value`` layouts for the query side and the event side."""
    lines = [f"turn-{len(query.q_h) - i}: {turn}" for i, turn in enumerate(query.q_h)]
    lines.append(f"current: {query.q_o}")
    if include_rewrite:
        lines.append(f"rewrite: {query.q_r}")
    event_block = "\n".join(
        [
            f"title: {event.title}",
            f"time: {format_time(event.event_time)}",
            f"locations: {'; '.join(event.locations)}",
            f"fact: {event.fact}",
            f"matched_index: {matched_index}",
        ]
    )
    return "\n".join(lines), event_block


def _event(store: EventLookup, cand: Candidate) -> Event:
    event = store.events.get(cand.event_id)
    if event is None:
        raise MissingEvent(cand.event_id)
    return event


def retrieve(cfg: DetectionConfig, idx: RetrievalIndex, backends: Backends, query: CompositeQuery) -> tuple[list[Candidate], list[Candidate]]:
    """(top-k candidates, gated subset) for the rewritten query."""
    vector = backends.embedder.embed([query.q_r])[0]
    candidates = search(idx, vector, cfg.k)
    return candidates, gate(candidates, cfg.retrieval_threshold)


def detect(
    cfg: DetectionConfig,
    idx: RetrievalIndex,
    store: EventLookup,
    backends: Backends,
    query: CompositeQuery,
) -> DetectionResult:
    """Run the cascade for one composite query.

    With ``k > 1`` the gated candidates are reranked in descending similarity
    and the first one above ``rerank_threshold`` wins.
    """
    candidates, gated = retrieve(cfg, idx, backends, query)
    if not gated:
        return DetectionResult(
            trending=False,
            decided_by=DecidedBy.RETRIEVAL_GATE,
            retrieval_similarity=candidates[0].similarity if candidates else None,
            generation=idx.generation,
        )

    top = gated[0]
    if cfg.mode is Mode.RETRIEVAL_ONLY:
        _event(store, top)
        return DetectionResult(
            trending=True,
            decided_by=DecidedBy.RETRIEVAL_ONLY,
            event_id=top.event_id,
            matched_index_id=top.index_id,
            retrieval_similarity=top.similarity,
            generation=idx.generation,
        )

    first_probability = None
    for cand in gated:
        event = _event(store, cand)
        query_block, event_block = serialize_for_rerank(
            query, event, cand.index_text, include_rewrite=cfg.include_rewrite
        )
        probability = float(backends.reranker.score(query_block, event_block))
        if first_probability is None:
            first_probability = probability
        if probability > cfg.rerank_threshold:
            return DetectionResult(
                trending=True,
                decided_by=DecidedBy.RERANKER,
                event_id=cand.event_id,
                matched_index_id=cand.index_id,
                retrieval_similarity=cand.similarity,
                rerank_probability=probability,
                generation=idx.generation,
            )
    return DetectionResult(
        trending=False,
        decided_by=DecidedBy.RERANKER,
        retrieval_similarity=top.similarity,
        rerank_probability=first_probability,
        generation=idx.generation,
    )
