"""Small text utilities used by the reference backends and validators."""

from __future__ import annotations

import re
from typing import Iterable

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")
_WS_RE = re.compile(r"\s+")

STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers him his how i if
    in into is it its itself just latest me more most my new news no nor not now of
    off on once only or other our out over own same she should so some such than that
    the their them then there these they this those through to too under until up very
    was we were what when where which while who whom why will with would you your
    """.split()
)


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens in order of appearance."""
    return _TOKEN_RE.findall(text.lower())


def content_tokens(text: str) -> set[str]:
    return {t for t in tokenize(text) if t not in STOPWORDS}


def normalize_space(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def split_sentences(text: str) -> list[str]:
    """Split on terminal punctuation followed by whitespace; keeps the punctuation."""
    text = normalize_space(text)
    if not text:
        return []
    return [s for s in _SENTENCE_RE.split(text) if s]


def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    sa, sb = set(a), set(b)
    union = sa | sb
    if not union:
        return 0.0
    return len(sa & sb) / len(union)


def char_ngrams(text: str, n: int = 3) -> list[str]:
    """Character n-grams of the lowercased, whitespace-collapsed text.

    Strings shorter than ``n`` yield themselves as a single gram.
    """
    text = normalize_space(text.lower())
    if not text:
        return []
    if len(text) < n:
        return [text]
    return [text[i : i + n] for i in range(len(text) - n + 1)]


def _windows(tokens: list[str], width: int) -> set[tuple[str, ...]]:
    return {tuple(tokens[i : i + width]) for i in range(len(tokens) - width + 1)}


def unsupported_sentences(fact: str, source: str, window: int = 8) -> list[str]:
    """Sentences of ``fact`` that share no ``window``-token run with ``source``.

    A sentence shorter than ``window`` tokens must appear in ``source`` as a
    whole contiguous run.
    """
    source_tokens = tokenize(source)
    cache: dict[int, set[tuple[str, ...]]] = {}
    bad = []
    for sentence in split_sentences(fact):
        tokens = tokenize(sentence)
        if not tokens:
            continue
        width = min(window, len(tokens))
        if width not in cache:
            cache[width] = _windows(source_tokens, width)
        if _windows(tokens, width).isdisjoint(cache[width]):
            bad.append(sentence)
    return bad
