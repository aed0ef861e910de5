from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import T0
from hotquery.errors import DimensionMismatch
from hotquery.index_generation import IndexQuery, Pattern
from hotquery.retrieval import Candidate, IndexPublisher, RetrievalIndex, build_index, gate, search
from oracles import linear_scan

TTL = 604800


def unit(v) -> tuple[float, ...]:
    v = np.asarray(v, dtype=float)
    return tuple(v / np.linalg.norm(v))


def iq(iid: str, vec, *, eid: str = "e1", lu: int = T0) -> IndexQuery:
    return IndexQuery(iid, eid, f"text {iid}", Pattern.FACTUAL, T0, lu, unit(vec) if vec is not None else None)


def test_stale_inputs_give_empty_index():
    idx = build_index([iq("a", [1, 0]), iq("b", [0, 1])], T0 + TTL, TTL)
    assert len(idx) == 0 and search(idx, unit([1, 0]), 3) == []


def test_three_fresh_two_stale():
    items = [iq("a", [1, 0], lu=T0 + 10), iq("b", [0, 1], lu=T0 - TTL), iq("c", [1, 1], lu=T0),
             iq("d", [1, 2], lu=T0 - TTL - 5), iq("e", [2, 1], lu=T0 + 1)]
    idx = build_index(items, T0 + 100, TTL)
    assert sorted(idx.index_ids) == ["a", "c", "e"]


def test_mixed_dimensions_name_offenders():
    items = [iq("a", [1, 0]), iq("b", [0, 1]), iq("z", [1, 0, 0])]
    with pytest.raises(DimensionMismatch) as err:
        build_index(items, T0, TTL)
    assert err.value.index_ids == ["z"]


def test_missing_embedding_and_duplicate_id():
    with pytest.raises(ValueError):
        build_index([iq("a", None)], T0, TTL)
    with pytest.raises(ValueError):
        build_index([iq("a", [1, 0]), iq("a", [0, 1], eid="e2")], T0, TTL)


def test_entries_sorted_by_event_then_id():
    items = [iq("b", [1, 0], eid="e2"), iq("c", [0, 1], eid="e1"), iq("a", [1, 1], eid="e2")]
    idx = build_index(items, T0, TTL)
    assert list(zip(idx.event_ids, idx.index_ids)) == [("e1", "c"), ("e2", "a"), ("e2", "b")]
    assert not idx.matrix.flags.writeable


def test_exact_match_first():
    idx = build_index([iq("a", [1, 0, 0]), iq("b", [0, 1, 0]), iq("c", [1, 1, 0])], T0, TTL)
    top = search(idx, unit([0, 1, 0]), 1)[0]
    assert top.index_id == "b" and abs(top.similarity - 1) <= 1e-6


def test_query_validation():
    idx = build_index([iq("a", [1, 0])], T0, TTL)
    with pytest.raises(DimensionMismatch):
        search(idx, unit([1, 0, 0]))
    with pytest.raises(ValueError):
        search(idx, [2.0, 0.0])
    with pytest.raises(ValueError):
        search(idx, unit([1, 0]), 0)


def test_linear_scan_5000_k10():
    rng = np.random.default_rng(5)
    m = rng.normal(size=(5000, 64))
    items = [iq(f"i{j:05d}", m[j], eid=f"e{j % 37}") for j in range(5000)]
    idx = build_index(items, T0, TTL)
    q = np.asarray(unit(rng.normal(size=64)))
    got = [(c.index_id, c.similarity) for c in search(idx, q, 10)]
    assert got == linear_scan(idx.index_ids, idx.matrix, q, 10)


def test_duplicate_vectors_tie_on_index_id():
    items = [iq(n, [1, 2, 3], eid=e) for n, e in [("m", "e1"), ("b", "e9"), ("k", "e0")]] + [iq("z", [3, 2, 1])]
    idx = build_index(items, T0, TTL)
    got = [c.index_id for c in search(idx, unit([1, 2, 3]), 4)]
    assert got == ["b", "k", "m", "z"]


def test_full_k_is_total_order():
    rng = np.random.default_rng(1)
    items = [iq(f"i{j}", rng.normal(size=8)) for j in range(40)]
    idx = build_index(items, T0, TTL)
    res = search(idx, unit(rng.normal(size=8)), len(idx))
    assert len(res) == 40
    assert all(a.similarity >= b.similarity for a, b in zip(res, res[1:]))


def test_gate_strict_and_order():
    cands = [Candidate("a", "e", "t", 0.9), Candidate("b", "e", "t", 0.5), Candidate("c", "e", "t", 0.7)]
    assert [c.index_id for c in gate(cands, 0.5)] == ["a", "c"]
    assert gate(cands, 0.95) == []
    assert gate(cands, -1) == cands


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=30), st.floats(-1, 1), st.floats(0, 1))
def test_gate_monotone(sims, t, bump):
    cands = [Candidate(str(i), "e", "t", s) for i, s in enumerate(sims)]
    low, high = gate(cands, t), gate(cands, t + bump)
    assert set(c.index_id for c in high) <= set(c.index_id for c in low) <= {c.index_id for c in cands}


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 60), st.integers(1, 12), st.integers(0, 10**6), st.booleans())
def test_search_matches_oracle(n, k, seed, dup):
    rng = np.random.default_rng(seed)
    m = rng.integers(-2, 3, size=(n, 6)).astype(float)
    m[np.all(m == 0, axis=1)] = 1.0
    if dup and n > 3:
        m[1] = m[0]
        m[3] = m[0]
    items = [iq(f"{rng.integers(1000):03d}-{j}", m[j]) for j in range(n)]
    idx = build_index(items, T0, TTL)
    q = np.asarray(unit(m[0] + rng.normal(scale=0.01, size=6) * (not dup)))
    got = [(c.index_id, c.similarity) for c in search(idx, q, k)]
    assert got == linear_scan(idx.index_ids, idx.matrix, q, k)


def test_publisher_generations():
    pub = IndexPublisher()
    assert pub.current.generation == 0
    a = pub.rebuild([iq("a", [1, 0])], T0)
    b = pub.rebuild([iq("a", [1, 0])], T0)
    assert (a.generation, b.generation) == (1, 2) and pub.current is b
    pub.publish(RetrievalIndex.empty(generation=9))
    assert pub.current.generation == 9
