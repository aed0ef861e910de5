from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from conftest import T0, event
from hotquery.backends import Backends, Counted, HashedNgramEmbedder, OverlapReranker, WindowRewriter
from hotquery.detection import (
    CompositeQuery,
    DecidedBy,
    DetectionConfig,
    DetectionResult,
    Mode,
    compose_query,
    detect,
    serialize_for_rerank,
)
from hotquery.errors import BackendError, BackendErrorKind, MissingEvent
from hotquery.event_store import EventStore, StoreSnapshot
from hotquery.index_generation import IndexQuery, Pattern
from hotquery.retrieval import build_index


class FixedReranker:
    def __init__(self, p: float) -> None:
        self.p = p

    def score(self, query_block: str, event_block: str) -> float:
        return self.p


def world(reranker=None):
    emb = HashedNgramEmbedder()
    ev = event(eid="e1", title="Harbor bridge closes", fact="A crane struck the harbor bridge.",
               locations=("Portside", "Dockland"))
    snap = StoreSnapshot(1, {}, {"e1": ev})
    texts = ["harbor bridge closed crane", "crane strikes harbor bridge"]
    items = [IndexQuery(f"i{j}", "e1", t, Pattern.FACTUAL, T0, T0, tuple(emb.vector(t))) for j, t in enumerate(texts)]
    idx = build_index(items, T0, 604800, generation=4)
    rr = Counted(reranker or OverlapReranker())
    backends = Backends(emb, None, None, WindowRewriter(), rr)  # type: ignore[arg-type]
    return snap, idx, backends, rr


# ============================================================================
# compose / serialize
# ============================================================================


def test_compose_no_history():
    q = compose_query(WindowRewriter(), [], "storm")
    assert q == CompositeQuery("storm", "storm", ())


def test_compose_truncates_history():
    q = compose_query(WindowRewriter(), ["a", "b", "c"], "d")
    assert q.q_h == ("b", "c") and q.q_r == "b c d"
    assert q == compose_query(WindowRewriter(), ["a", "b", "c"], "d")


def test_compose_rejects_empty():
    with pytest.raises(ValueError):
        compose_query(WindowRewriter(), [], " ")


def test_serialize_layout():
    ev = event(title="T", fact="F.", locations=("X", "Y"), event_time=0)
    q = CompositeQuery("b c d", "d", ("b", "c"))
    qb, eb = serialize_for_rerank(q, ev, "idx text")
    assert qb == "turn-2: b\nturn-1: c\ncurrent: d"
    assert eb == "title: T\ntime: 1970-01-01T00:00:00Z\nlocations: X; Y\nfact: F.\nmatched_index: idx text"
    assert (qb, eb) == serialize_for_rerank(q, ev, "idx text")


def test_serialize_empty_history_and_rewrite_switch():
    q = CompositeQuery("r", "d", ())
    assert serialize_for_rerank(q, event(), "i")[0] == "current: d"
    assert serialize_for_rerank(q, event(), "i", include_rewrite=True)[0] == "current: d\nrewrite: r"


# ============================================================================
# detect
# ============================================================================


def test_planted_query_is_trending():
    snap, idx, b, rr = world()
    q = compose_query(b.rewriter, [], "harbor bridge closed crane")
    r = detect(DetectionConfig(), idx, snap, b, q)
    # the exact index text embeds to the same vector: similarity 1, rerank tokens all in event block
    assert r.trending and r.event_id == "e1" and r.matched_index_id == "i0"
    assert r.decided_by is DecidedBy.RERANKER and r.rerank_probability == 1.0
    assert abs(r.retrieval_similarity - 1.0) <= 1e-9 and r.generation == 4


def test_no_overlap_exits_at_gate():
    snap, idx, b, rr = world()
    r = detect(DetectionConfig(), idx, snap, b, compose_query(b.rewriter, [], "xyz"))
    assert not r.trending and r.decided_by is DecidedBy.RETRIEVAL_GATE
    assert r.rerank_probability is None and rr.calls["score"] == 0


def test_mode_branches_with_low_reranker():
    snap, idx, b, rr = world(FixedReranker(0.2))
    q = compose_query(b.rewriter, [], "harbor bridge closed crane")
    two = detect(DetectionConfig(mode=Mode.TWO_STAGE), idx, snap, b, q)
    one = detect(DetectionConfig(mode=Mode.RETRIEVAL_ONLY), idx, snap, b, q)
    assert (one.trending, two.trending) == (True, False)
    assert one.decided_by is DecidedBy.RETRIEVAL_ONLY and one.rerank_probability is None
    assert two.rerank_probability == 0.2 and two.event_id is None
    assert rr.calls["score"] == 1


def test_rerank_threshold_is_strict():
    snap, idx, b, _ = world(FixedReranker(0.5))
    q = compose_query(b.rewriter, [], "harbor bridge closed crane")
    assert not detect(DetectionConfig(), idx, snap, b, q).trending
    assert detect(DetectionConfig(rerank_threshold=0.49), idx, snap, b, q).trending


def test_k_greater_than_one_stops_at_first_accept():
    class Second:
        def score(self, qb, eb):
            return 0.9 if "crane strikes" in eb else 0.1

    snap, idx, b, rr = world(Second())
    q = compose_query(b.rewriter, [], "harbor bridge closed crane")
    r = detect(DetectionConfig(k=2, retrieval_threshold=0.1), idx, snap, b, q)
    assert r.trending and r.matched_index_id == "i1" and rr.calls["score"] == 2


def test_missing_event_is_error():
    snap, idx, b, _ = world()
    with pytest.raises(MissingEvent):
        detect(DetectionConfig(), idx, StoreSnapshot(0), b, compose_query(b.rewriter, [], "harbor bridge closed crane"))


def test_backend_errors_propagate():
    class Down:
        def score(self, qb, eb):
            raise BackendError(BackendErrorKind.TIMEOUT, "slow")

    snap, idx, b, _ = world(Down())
    with pytest.raises(BackendError):
        detect(DetectionConfig(), idx, snap, b, compose_query(b.rewriter, [], "harbor bridge closed crane"))


def test_republished_identical_index_gives_same_verdict():
    snap, idx, b, _ = world()
    again = build_index([], T0, 604800)
    assert len(again) == 0
    idx2 = dataclasses.replace(idx, generation=idx.generation + 1)
    q = compose_query(b.rewriter, ["harbor"], "crane bridge")
    r1, r2 = detect(DetectionConfig(), idx, snap, b, q), detect(DetectionConfig(), idx2, snap, b, q)
    assert dataclasses.replace(r1, generation=None) == dataclasses.replace(r2, generation=None)


def test_result_invariant_and_config_validation():
    with pytest.raises(ValueError):
        DetectionResult(trending=True, decided_by=DecidedBy.RERANKER)
    with pytest.raises(ValueError):
        DetectionConfig(k=0)
    with pytest.raises(ValueError):
        DetectionConfig(retrieval_threshold=float("nan"))
    assert DetectionConfig.from_mapping({"mode": "RetrievalOnly"}).mode is Mode.RETRIEVAL_ONLY


def test_empty_index_never_trends():
    b = Backends(HashedNgramEmbedder(), None, None, WindowRewriter(), OverlapReranker())  # type: ignore[arg-type]
    idx = build_index([], T0, 604800)
    r = detect(DetectionConfig(), idx, EventStore(), b, compose_query(b.rewriter, [], "anything"))
    assert r.decided_by is DecidedBy.RETRIEVAL_GATE and r.retrieval_similarity is None
    assert np.isfinite(0.0)
