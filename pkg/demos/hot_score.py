"""
Hot-event scoring
=================

How the influence score, domain weight, article count and age of an event
combine into one hotness number.
"""

from __future__ import annotations

import numpy as np

from hotquery import Event, HotScoreConfig, score_event, select_hot
from hotquery.hot_selection import temporal_factor

NOW = 1_760_000_000

# ============================================================================
# one event, scored at a pinned clock
# ============================================================================

cfg = HotScoreConfig(domain_weights={"politics": 1.2}, lambda_c=0.05)
summit = Event(
    event_id="summit",
    title="Coastal summit ends with joint statement",
    event_time=NOW - 43200,
    fact="Leaders closed the coastal summit with a joint statement.",
    locations=("Harbor City",),
    domain="politics",
    source_article_ids=tuple(f"a{i}" for i in range(10)),
    news_count=10,
    model_score=0.8,
    last_update=NOW - 43200,
)
scored = score_event(cfg, summit, NOW)
print("score:", round(scored.score, 6))
print("components:", scored.components)

# ============================================================================
# the temporal boost halves every six hours
# ============================================================================

hours = np.arange(0, 49, 6)
boost = np.array([temporal_factor(cfg, h * 3600) - 1.0 for h in hours])
for h, b in zip(hours, boost):
    print(f"{h:3d}h  boost={b:.4f}")

# an old event with a modest influence score drops below the cutoff
quiet = Event("quiet", "Minor road works", NOW - 10 * 86400, "Road works began.", (), "general",
              ("b1",), 1, 0.4, NOW - 10 * 86400)
print("hot:", [s.event_id for s in select_hot(cfg, [summit, quiet], NOW)])
