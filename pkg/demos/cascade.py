"""
The retrieve-then-rerank cascade
================================

Build a retrieval index over a few events and watch single queries pass or
stop at each stage.
"""

from __future__ import annotations

from hotquery import Backends, DetectionConfig, EventStore, Mode, build_index, compose_query, detect
from hotquery.event_store import Event, NewsArticle
from hotquery.index_generation import IndexQuery, Pattern

NOW = 1_760_000_000
backends = Backends.reference()
emb = backends.embedder

store = EventStore()
pool = []
facts = {
    "bridge": ("Harbor bridge closes", "A cargo crane struck the harbor bridge north span.",
               ["harbor bridge crane collision", "is the harbor bridge closed?"]),
    "festival": ("Orchard festival record", "The orchard festival drew a record cider crowd.",
                 ["orchard festival record crowd"]),
}
for eid, (title, fact, queries) in facts.items():
    store.put_article(NewsArticle(f"{eid}-a", "wire", "http://example.test", NOW, title, fact))
    store.upsert_event(Event(eid, title, NOW, fact, (), "general", (f"{eid}-a",), 1, 0.8, NOW))
    for i, text in enumerate(queries):
        pool.append(IndexQuery(f"{eid}-{i}", eid, text, Pattern.FACTUAL, NOW, NOW, tuple(emb.vector(text))))
idx = build_index(pool, NOW)
print(f"index: {len(idx)} active entries")

# ============================================================================
# one conversation, three turns
# ============================================================================

# The rewrite folds the last two turns into the current one, so the off-topic
# third turn still retrieves the bridge event. Only the reranker, which reads
# the current turn against the event, turns it down.

history: list[str] = []
for turn in ["good cafes near the harbor", "harbor bridge crane collision", "unrelated gardening tips"]:
    query = compose_query(backends.rewriter, history, turn)
    for mode in (Mode.TWO_STAGE, Mode.RETRIEVAL_ONLY):
        r = detect(DetectionConfig(mode=mode), idx, store, backends, query)
        print(f"{turn!r:38} {mode.value:<13} trending={r.trending!s:<5} by={r.decided_by.value:<13} "
              f"sim={r.retrieval_similarity} event={r.event_id}")
    history.append(turn)
