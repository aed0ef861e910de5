from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hotquery.event_store import Event, EventStore, NewsArticle  # noqa: E402

T0 = 1_760_000_000


def article(aid: str = "a1", body: str = "Body text.", *, source: str = "wire", published_at: int = T0,
            title: str = "Title") -> NewsArticle:
    return NewsArticle(aid, source, f"http://example.test/{aid}", published_at, title, body)


def event(eid: str = "e1", *, articles: tuple[str, ...] = ("a1",), title: str = "Title", fact: str = "Fact.",
          event_time: int = T0, last_update: int | None = None, model_score: float = 0.5,
          domain: str = "general", locations: tuple[str, ...] = ()) -> Event:
    return Event(
        event_id=eid,
        title=title,
        event_time=event_time,
        fact=fact,
        locations=locations,
        domain=domain,
        source_article_ids=articles,
        news_count=len(set(articles)),
        model_score=model_score,
        last_update=event_time if last_update is None else last_update,
    )


@pytest.fixture
def store_with_article() -> EventStore:
    s = EventStore()
    s.put_article(article())
    return s


# =============================================================================
# acceptance reporting: one PASS/FAIL line per criterion
# =============================================================================

_CRITERIA: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    label = marker.args[0]
    if rep.failed:
        _CRITERIA[label] = "FAIL"
    elif rep.when == "call" and label not in _CRITERIA:
        _CRITERIA[label] = "PASS"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for label in sorted(_CRITERIA, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(f"{_CRITERIA[label]} {label}")
