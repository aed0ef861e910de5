from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import T0, event
from hotquery.backends import HashedNgramEmbedder, ReferenceGenerationBackend, ScriptedGenerationBackend, make_title_key
from hotquery.errors import BackendError, ParseError
from hotquery.index_generation import (
    GenerationSpec,
    IndexQuery,
    Pattern,
    active_indexes,
    build_generation_request,
    generate_all,
    generate_indexes,
    load_indexes,
    make_index_id,
    parse_generation_response,
    post_filter,
    save_indexes,
)
from hotquery.text import STOPWORDS, tokenize

GEN = GenerationSpec()


def response(f: list[str], s: list[str], q: list[str], reason: str = "entities: x") -> str:
    parts = ["{Reason}", reason, "{Factual queries}", *[f"{i}. {x}" for i, x in enumerate(f, 1)],
             "{Search queries}", *[f"- {x}" for x in s], "{Question queries}", *q]
    return "\n".join(parts)


# ============================================================================
# request / parse
# ============================================================================


def test_request_carries_event_and_headers():
    e = event(title="Harbor bridge closes", locations=("North", "South"), fact="A crane hit it.")
    p = build_generation_request(e, GEN)
    for needle in ("Harbor bridge closes", "North; South", "A crane hit it.", "{Reason}",
                   "{Factual queries}", "{Search queries}", "{Question queries}", "30", "10", "6"):
        assert needle in p
    assert p == build_generation_request(e, GEN)


def test_zero_count_section_omitted():
    p = build_generation_request(event(), GenerationSpec(n_question=0))
    assert "{Question queries}" not in p and "Question queries" not in p


def test_parse_full_sizes():
    raw = response([f"f{i}" for i in range(30)], [f"s{i}" for i in range(10)], [f"q{i}" for i in range(6)])
    parsed = parse_generation_response(raw, GEN)
    assert (len(parsed.factual), len(parsed.search), len(parsed.question)) == (30, 10, 6)
    assert parsed.factual[0] == "f0" and parsed.reason == "entities: x"


def test_parse_caps_at_spec():
    parsed = parse_generation_response(response([f"f{i}" for i in range(35)], [], []), GEN)
    assert parsed.factual == [f"f{i}" for i in range(30)]


def test_parse_dedups_preserving_first():
    parsed = parse_generation_response(response(["a", "b", "a", "c"], [], []), GEN)
    assert parsed.factual == ["a", "b", "c"]


def test_missing_search_header_names_it():
    raw = "{Reason}\nr\n{Factual queries}\nx\n{Question queries}\ny"
    with pytest.raises(ParseError, match="Search queries") as err:
        parse_generation_response(raw, GEN)
    assert err.value.field == "Search queries"


def test_missing_optional_section_when_count_zero():
    raw = "{Reason}\nr\n{Factual queries}\nx\n{Search queries}\ny"
    assert parse_generation_response(raw, GenerationSpec(n_question=0)).question == []


def test_tolerates_markdown_headers_and_trailing_sections():
    raw = "## {Reason}\nr\n**{Factual queries}**\n1) a\n{Search queries}:\n* b\n{Question queries}\n\"c\"\n{Notes}\nz"
    parsed = parse_generation_response(raw, GEN)
    assert (parsed.factual, parsed.search, parsed.question) == (["a"], ["b"], ["c"])


@given(st.lists(st.text("abc ", min_size=1, max_size=5).filter(str.strip), max_size=50), st.integers(0, 40))
def test_counts_never_exceed_spec(items, cap):
    parsed = parse_generation_response(response(items, items, items), GenerationSpec(cap, cap, cap))
    assert all(len(v) <= cap for v in parsed.queries.values())


# ============================================================================
# post-filter
# ============================================================================


def test_title_query_kept_unrelated_dropped():
    e = event(title="Harbor bridge closes")
    kept = post_filter(ReferenceGenerationBackend(), e, ["Harbor bridge closes", "best pancake recipe"])
    assert kept == ["Harbor bridge closes"]


def test_four_planted_of_ten():
    e = event(title="Volcano erupts near Reykjavik airport")
    qs = ["volcano ash cloud", "weather today", "reykjavik flights", "cheap hotels", "airport closed",
          "football scores", "stock market", "erupts again", "recipe ideas", "new phones"]
    salient = {t for t in tokenize(e.title) if t not in STOPWORDS}
    oracle = [q for q in qs if set(tokenize(q)) & salient]
    assert len(oracle) == 4
    assert post_filter(ReferenceGenerationBackend(), e, qs) == oracle


def test_filter_never_adds_or_rewrites():
    e = event(title="Harbor")
    g = ScriptedGenerationBackend(default="{Filter queries}\nHarbor rewritten\nharbor\ninvented")
    assert post_filter(g, e, ["harbor", "other"]) == ["harbor"]


def test_filter_needs_input():
    with pytest.raises(ValueError):
        post_filter(ReferenceGenerationBackend(), event(), [])


# ============================================================================
# generate_indexes
# ============================================================================


def scripted_for(title: str, raw: str) -> ScriptedGenerationBackend:
    return ScriptedGenerationBackend({title: raw}, key_fn=make_title_key(), fallback=ReferenceGenerationBackend())


def test_three_queries_tagged():
    e = event(title="Harbor bridge", last_update=T0 + 7)
    g = scripted_for("Harbor bridge", response(["harbor closed"], ["harbor bridge news?"], ["why bridge shut?"]))
    out = generate_indexes(g, HashedNgramEmbedder(), e, GEN, T0 + 100)
    assert [(q.pattern, q.text) for q in out] == [
        (Pattern.FACTUAL, "harbor closed"), (Pattern.SEARCH, "harbor bridge news?"), (Pattern.QUESTION, "why bridge shut?")]
    for q in out:
        assert q.created_at == T0 + 100 and q.event_last_update == T0 + 7 and q.event_id == e.event_id
        assert abs(math.sqrt(sum(x * x for x in q.embedding)) - 1) <= 1e-6
        assert q.index_id == make_index_id(e.event_id, q.pattern, q.text)


def test_all_filtered_is_empty_not_error():
    e = event(title="Harbor bridge")
    g = scripted_for("Harbor bridge", response(["pancakes"], ["weather?"], ["football?"]))
    assert generate_indexes(g, HashedNgramEmbedder(), e, GEN, T0) == []


def test_errors_carry_event_id():
    e = event(eid="evt-9", title="Harbor bridge")
    g = scripted_for("Harbor bridge", "{Reason}\nr\n{Factual queries}\nx")
    with pytest.raises(ParseError, match="evt-9") as err:
        generate_indexes(g, HashedNgramEmbedder(), e, GEN, T0)
    assert err.value.event_id == "evt-9"
    with pytest.raises(BackendError, match="evt-9"):
        generate_indexes(ScriptedGenerationBackend({}), HashedNgramEmbedder(), e, GEN, T0)


def test_five_event_counts_match_plants():
    plants = {  # title -> (queries, number that mention a title token)
        "Alpha summit": (["alpha talks", "summit opens", "rain"], 2),
        "Bravo merger": (["bravo deal", "merger vote", "bravo merger", "tea"], 3),
        "Cobalt mine": (["cobalt prices", "gold"], 1),
        "Delta flood": (["river", "lake"], 0),
        "Ember fire": (["ember fire", "fire crews", "ember smoke", "forest", "fire alert"], 4),
    }
    table = {t: response(qs, [], []) for t, (qs, _) in plants.items()}
    g = ScriptedGenerationBackend(table, key_fn=make_title_key(), fallback=ReferenceGenerationBackend())
    events = [event(eid=f"e{i}", title=t) for i, t in enumerate(plants)]
    out = generate_all(g, HashedNgramEmbedder(), events, GEN, T0)
    counts = {e.title: sum(q.event_id == e.event_id for q in out) for e in events}
    assert counts == {t: n for t, (_, n) in plants.items()}


def test_generate_all_order_and_workers():
    titles = ["Zeta storm", "Alpha summit", "Mid vote"]
    table = {t: response([f"{t} a", f"{t} b"], [f"{t} s?"], [f"{t} q?"]) for t in titles}
    g = ScriptedGenerationBackend(table, key_fn=make_title_key(), fallback=ReferenceGenerationBackend())
    events = [event(eid=f"e{n}", title=t) for n, t in zip("cab", titles)]
    seq = generate_all(g, HashedNgramEmbedder(), events, GEN, T0)
    par = generate_all(g, HashedNgramEmbedder(), events, GEN, T0, workers=3)
    assert seq == par
    assert [q.event_id for q in seq] == sorted(q.event_id for q in seq)
    assert [q.text for q in seq[:4]] == ["Alpha summit a", "Alpha summit b", "Alpha summit s?", "Alpha summit q?"]


# ============================================================================
# TTL and persistence
# ============================================================================


def iq(i: int, last_update: int) -> IndexQuery:
    v = np.zeros(4)
    v[i % 4] = 1.0
    return IndexQuery(f"i{i}", "e1", f"text {i}", Pattern.FACTUAL, T0, last_update, tuple(v))


def test_active_boundaries():
    now = T0 + 604800
    assert active_indexes([iq(0, now)], now) == [iq(0, now)]
    assert active_indexes([iq(0, T0)], now) == []
    assert active_indexes([iq(0, T0 + 1)], now) == [iq(0, T0 + 1)]


def test_mixed_fresh_and_stale():
    now = T0 + 10 * 86400
    items = [iq(0, now - 10), iq(1, now - 700000), iq(2, now - 5), iq(3, now - 604800), iq(4, now)]
    want = [q for q in items if now - q.event_last_update < 604800]
    assert active_indexes(items, now) == want == [items[0], items[2], items[4]]


@given(st.lists(st.integers(0, 2 * 604800), max_size=20), st.integers(0, 2 * 604800))
def test_active_idempotent(ages, now):
    items = [iq(i, now - a) for i, a in enumerate(ages)]
    once = active_indexes(items, now)
    assert active_indexes(once, now) == once


def test_index_invariants():
    with pytest.raises(ValueError):
        IndexQuery("i", "e", " ", Pattern.FACTUAL, T0, T0)
    with pytest.raises(ValueError):
        IndexQuery("i", "e", "t", Pattern.FACTUAL, T0, T0, (0.5, 0.5))
    with pytest.raises(ValueError):
        IndexQuery("i", "e", "t", "Opinion", T0, T0)  # type: ignore[arg-type]


def test_save_load_roundtrip(tmp_path):
    items = [iq(i, T0) for i in range(3)] + [IndexQuery("x", "e2", "no vec", Pattern.QUESTION, T0, T0)]
    p = save_indexes(items, tmp_path / "idx.jsonl")
    assert load_indexes(p) == items
    rec = json.loads(p.read_text().splitlines()[0])
    assert set(rec) == {"index_id", "event_id", "text", "pattern", "created_at", "event_last_update", "embedding"}


def test_load_reports_line(tmp_path):
    p = tmp_path / "idx.jsonl"
    p.write_text(json.dumps(iq(0, T0).to_record()) + "\n{bad\n")
    with pytest.raises(ParseError) as err:
        load_indexes(p)
    assert err.value.line == 2
