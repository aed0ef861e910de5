"""Hot-event scoring and selection.

An event's hotness is the product of four factors::

    score = S_m * W_d * (1 + lambda_c * C_n) * (1 + alpha_t * 0.5 ** (dt / half_life))

``S_m`` is the event's influence score, ``W_d`` a per-domain weight, ``C_n``
the number of articles behind the event and ``dt`` its age in seconds. Events
scoring strictly above ``hot_threshold`` are hot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .event_store import Event

SIX_HOURS = 21600


@dataclass(frozen=True)
class HotScoreConfig:
    domain_weights: Mapping[str, float] = field(default_factory=dict)
    lambda_c: float = 0.1
    alpha_t: float = 1.0
    half_life_seconds: int = SIX_HOURS
    hot_threshold: float = 0.5
    # which event clock dt is measured from: "last_update" or "event_time"
    clock: str = "last_update"

    def __post_init__(self) -> None:
        if self.half_life_seconds <= 0:
            raise ValueError("half_life_seconds must be > 0")
        bad = [d for d, w in self.domain_weights.items() if not w > 0]
        if bad:
            raise ValueError(f"domain weights must be > 0: {bad}")
        if self.lambda_c < 0 or self.alpha_t < 0:
            raise ValueError("lambda_c and alpha_t must be >= 0")
        if self.clock not in ("last_update", "event_time"):
            raise ValueError(f"unknown clock {self.clock!r}")

    def weight(self, domain: str) -> float:
        return float(self.domain_weights.get(domain, 1.0))

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> HotScoreConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown hot-score settings: {sorted(unknown)}")
        kwargs = dict(data)
        if "domain_weights" in kwargs:
            kwargs["domain_weights"] = {str(k): float(v) for k, v in kwargs["domain_weights"].items()}
        return cls(**kwargs)


@dataclass(frozen=True)
class ScoreComponents:
    model_score: float
    domain_weight: float
    count_factor: float
    temporal_factor: float


@dataclass(frozen=True)
class ScoredEvent:
    event_id: str
    score: float
    components: ScoreComponents
    last_update: int = 0


def temporal_factor(cfg: HotScoreConfig, delta_t_seconds: float) -> float:
    """``1 + alpha_t * 0.5 ** (dt / half_life)``; negative ages count as 0."""
    dt = max(0.0, float(delta_t_seconds))
    return 1.0 + cfg.alpha_t * 0.5 ** (dt / cfg.half_life_seconds)


def score_event(cfg: HotScoreConfig, event: Event, now: int) -> ScoredEvent:
    anchor = event.last_update if cfg.clock == "last_update" else event.event_time
    parts = ScoreComponents(
        model_score=event.model_score,
        domain_weight=cfg.weight(event.domain),
        count_factor=1.0 + cfg.lambda_c * event.news_count,
        temporal_factor=temporal_factor(cfg, now - anchor),
    )
    score = parts.model_score * parts.domain_weight * parts.count_factor * parts.temporal_factor
    return ScoredEvent(event.event_id, score, parts, event.last_update)


def select_hot(cfg: HotScoreConfig, events: Iterable[Event], now: int) -> list[ScoredEvent]:
    """Events scoring strictly above the threshold, hottest first.

    Equal scores are ordered by newer ``last_update``, then by ``event_id``.
    """
    scored = [score_event(cfg, e, now) for e in events]
    hot = [s for s in scored if s.score > cfg.hot_threshold]
    hot.sort(key=lambda s: (-s.score, -s.last_update, s.event_id))
    return hot
