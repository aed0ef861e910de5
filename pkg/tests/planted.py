"""Planted-corpus builder shared by the end-to-end tests.

Event vocabularies are drawn from the letters a-m and negative queries from
n-z, so the two sides share no character 3-gram. Each positive query is a
word-order shuffle of one planted index query, which keeps almost all of its
3-grams, and every word of it appears in its event's fact, so the overlap
reranker scores it 1.0.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from hotquery.backends import (
    Backends,
    HashedNgramEmbedder,
    JaccardRelationBackend,
    OverlapReranker,
    ReferenceGenerationBackend,
    ScriptedGenerationBackend,
    WindowRewriter,
    make_title_key,
)
from hotquery.calibration import LabeledExample
from hotquery.detection import compose_query
from hotquery.event_store import Event, EventStore, NewsArticle, make_event_id
from hotquery.index_generation import GenerationSpec, IndexQuery, generate_all
from hotquery.text import STOPWORDS

NOW = 1_760_000_000
POS_LETTERS = "abcdefghijklm"
NEG_LETTERS = "nopqrstuvwxyz"


def random_word(rng: random.Random, letters: str, used: set[str]) -> str:
    while True:
        word = "".join(rng.choice(letters) for _ in range(rng.randint(6, 9)))
        if word not in used and word not in STOPWORDS:
            used.add(word)
            return word


def fixture_response(words: list[str]) -> str:
    w = words
    factual = [" ".join(w[0:4]), " ".join(w[2:6]), " ".join([w[0], w[5], w[6], w[1]])]
    search = [" ".join([w[1], w[3], w[6], w[7]]) + "?"]
    question = [" ".join([w[0], w[4], w[7], w[2]]) + "?"]
    lines = ["{Reason}", "entities: " + ", ".join(w[:3]), "{Factual queries}"]
    lines += [f"{i}. {q}" for i, q in enumerate(factual, 1)]
    lines += ["{Search queries}"] + [f"{i}. {q}" for i, q in enumerate(search, 1)]
    lines += ["{Question queries}"] + [f"{i}. {q}" for i, q in enumerate(question, 1)]
    return "\n".join(lines)


@dataclass
class PlantedCorpus:
    store: EventStore
    indexes: list[IndexQuery]
    dataset: list[LabeledExample]
    backends: Backends
    scripted: ScriptedGenerationBackend
    vocab: dict[str, list[str]]
    now: int = NOW


def build_planted_corpus(
    seed: int = 7,
    n_events: int = 50,
    n_pos: int = 250,
    n_neg: int = 250,
    spec: GenerationSpec = GenerationSpec(),
) -> PlantedCorpus:
    rng = random.Random(seed)
    used: set[str] = set()
    store = EventStore()
    scripted = ScriptedGenerationBackend(key_fn=make_title_key(), fallback=ReferenceGenerationBackend())
    vocab: dict[str, list[str]] = {}
    for i in range(n_events):
        words = [random_word(rng, POS_LETTERS, used) for _ in range(8)]
        title = " ".join(words[:3])
        event = Event(
            event_id=make_event_id(title, NOW - 3600, f"art-{i}"),
            title=title,
            event_time=NOW - 3600,
            fact=" ".join(words) + ".",
            locations=(),
            domain="general",
            source_article_ids=(f"art-{i}",),
            news_count=1,
            model_score=0.8,
            last_update=NOW - 600,
        )
        store.put_article(
            NewsArticle(f"art-{i}", "wire", f"http://example.test/{i}", NOW - 3000, title, event.fact)
        )
        store.upsert_event(event)
        vocab[event.event_id] = words
        scripted.register(title, fixture_response(words))

    embedder = HashedNgramEmbedder(256)
    backends = Backends(embedder, scripted, JaccardRelationBackend(), WindowRewriter(), OverlapReranker())
    indexes = generate_all(scripted, embedder, store.events.values(), spec, NOW)

    by_event: dict[str, list[IndexQuery]] = {}
    for q in indexes:
        by_event.setdefault(q.event_id, []).append(q)
    event_ids = sorted(by_event)

    dataset: list[LabeledExample] = []
    for j in range(n_pos):
        eid = event_ids[j % len(event_ids)]
        source = rng.choice(by_event[eid]).text.rstrip("?")
        words = source.split()
        rng.shuffle(words)
        history: list[str] = []
        if j % 5 == 0:
            history = [" ".join(rng.sample(vocab[eid], 2))]
        dataset.append(LabeledExample(compose_query(backends.rewriter, history, " ".join(words)), True, eid))
    neg_used: set[str] = set()
    for _ in range(n_neg):
        words = [random_word(rng, NEG_LETTERS, neg_used) for _ in range(rng.randint(2, 5))]
        dataset.append(LabeledExample(compose_query(backends.rewriter, [], " ".join(words)), False, None))
    return PlantedCorpus(store, indexes, dataset, backends, scripted, vocab)
