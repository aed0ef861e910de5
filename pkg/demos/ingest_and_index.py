"""
From articles to index queries
==============================

Consolidate a small article batch into events with the offline reference
backends, pick the hot events and generate their index queries.
"""

from __future__ import annotations

from hotquery import Backends, EventStore, SourcePolicy, consolidate, generate_all, select_hot
from hotquery.event_store import NewsArticle
from hotquery.hot_selection import HotScoreConfig
from hotquery.index_generation import GenerationSpec

NOW = 1_760_000_000
BRIDGE = ("The Harbor bridge closed after a cargo crane struck its north span. "
          "Engineers are inspecting the damage. Commuters face long detours.")
FESTIVAL = "The orchard festival drew a record crowd. Cider sales doubled."

batch = [
    NewsArticle("a1", "wire", "http://example.test/1", NOW - 7200, "Harbor bridge closes", BRIDGE),
    NewsArticle("a2", "wire", "http://example.test/2", NOW - 3600, "Harbor bridge closes", BRIDGE),
    NewsArticle("a3", "tabloid", "http://example.test/3", NOW - 3600, "Shock bridge drama", BRIDGE),
    NewsArticle("a4", "wire", "http://example.test/4", NOW - 1800, "Orchard festival", FESTIVAL),
]

# ============================================================================
# consolidation: the tabloid is blocked, the two bridge reports merge
# ============================================================================

store = EventStore()
backends = Backends.reference()
policy = SourcePolicy(blocked_sources=frozenset({"tabloid"}))
report = consolidate(store, policy, backends, batch, default_model_score=0.6)
for line in report.lines():
    print(line)
for ev in store.events.values():
    print(f"{ev.event_id}  news_count={ev.news_count}  {ev.title!r}")

# ============================================================================
# hot events and their index queries
# ============================================================================

hot = [store.events[s.event_id] for s in select_hot(HotScoreConfig(), store.events.values(), NOW)]
indexes = generate_all(backends.generator, backends.embedder, hot, GenerationSpec(), NOW)
for q in indexes:
    print(f"{q.pattern.value:<8} {q.text}")
