"""Trending-query detection for conversational search."""

from __future__ import annotations

from .backends import Backends
from .calibration import calibrate_threshold, metrics, pointwise_loss
from .detection import CompositeQuery, DetectionConfig, DetectionResult, Mode, compose_query, detect
from .event_store import Event, EventStore, NewsArticle, load_snapshot, save_snapshot
from .hot_selection import HotScoreConfig, score_event, select_hot
from .index_generation import GenerationSpec, IndexQuery, generate_all, generate_indexes
from .ingestion import SourcePolicy, consolidate
from .retrieval import RetrievalIndex, build_index, search

__version__ = "0.1.0"

__all__ = [
    "Backends",
    "CompositeQuery",
    "DetectionConfig",
    "DetectionResult",
    "Event",
    "EventStore",
    "GenerationSpec",
    "HotScoreConfig",
    "IndexQuery",
    "Mode",
    "NewsArticle",
    "RetrievalIndex",
    "SourcePolicy",
    "build_index",
    "calibrate_threshold",
    "compose_query",
    "consolidate",
    "detect",
    "generate_all",
    "generate_indexes",
    "load_snapshot",
    "metrics",
    "pointwise_loss",
    "save_snapshot",
    "score_event",
    "search",
    "select_hot",
]
