"""Pluggable model backends.

Five capabilities sit behind small protocols: embedding, text generation,
same-event relation classification, query rewriting and reranking. Each has a
deterministic reference implementation, so the whole pipeline runs offline,
plus an HTTP client for a live model service.

Reference behaviour in brief:

* ``HashedNgramEmbedder``: character 3-gram counts hashed into ``dim`` buckets, L2-normalised.
* ``ScriptedGenerationBackend``: response table keyed by prompt (or by a key function).
* ``ReferenceGenerationBackend``: extractive handling of every built-in prompt task.
* ``JaccardRelationBackend``: token Jaccard of the two facts against a threshold.
* ``WindowRewriter``: last two history turns plus the current turn, space-joined.
* ``OverlapReranker``: share of query content tokens found in the event block.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import socket
import threading
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

from . import prompts as P
from .errors import BackendError, BackendErrorKind, ParseError
from .text import char_ngrams, content_tokens, jaccard, split_sentences, tokenize

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0


class RelationVerdict(str, Enum):
    SAME_EVENT = "SameEvent"
    DISTINCT = "Distinct"


# =============================================================================
# Protocols
# =============================================================================


@runtime_checkable
class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return an ``(len(texts), D)`` array of unit-norm rows."""
        ...


@runtime_checkable
class GenerationBackend(Protocol):
    def complete(self, prompt: str) -> str: ...


@runtime_checkable
class RelationBackend(Protocol):
    def classify(self, a: Any, b: Any) -> RelationVerdict:
        """``a`` and ``b`` expose ``title`` and ``fact`` attributes."""
        ...


@runtime_checkable
class RewriteBackend(Protocol):
    def rewrite(self, history: Sequence[str], current: str) -> str: ...


@runtime_checkable
class RerankBackend(Protocol):
    def score(self, query_block: str, event_block: str) -> float:
        """Probability in [0, 1] that the query asks about the event."""
        ...


@dataclass
class Backends:
    embedder: EmbeddingBackend
    generator: GenerationBackend
    relation: RelationBackend
    rewriter: RewriteBackend
    reranker: RerankBackend
    # post-filter judge for generated index queries; falls back to ``generator``
    filter: GenerationBackend | None = None

    @classmethod
    def reference(cls, dim: int = 256) -> Backends:
        return cls(
            embedder=HashedNgramEmbedder(dim=dim),
            generator=ReferenceGenerationBackend(),
            relation=JaccardRelationBackend(),
            rewriter=WindowRewriter(),
            reranker=OverlapReranker(),
        )

    @property
    def filter_backend(self) -> GenerationBackend:
        return self.filter if self.filter is not None else self.generator


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[None, :]
    if not np.isfinite(matrix).all():
        raise BackendError(BackendErrorKind.MALFORMED, "embedding has non-finite entries")
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if (norms == 0).any():
        raise BackendError(BackendErrorKind.MALFORMED, "embedding has zero norm")
    return np.ascontiguousarray(matrix / norms)


# =============================================================================
# Reference implementations
# =============================================================================


@lru_cache(maxsize=1 << 16)
def _bucket(gram: str, dim: int) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


class HashedNgramEmbedder:
    def __init__(self, dim: int = 256, n: int = 3) -> None:
        if dim < 1 or n < 1:
            raise ValueError("dim and n must be positive")
        self.dim = dim
        self.n = n

    def vector(self, text: str) -> np.ndarray:
        grams = char_ngrams(text, self.n)
        if not grams:
            raise BackendError(BackendErrorKind.MALFORMED, "cannot embed empty text")
        v = np.zeros(self.dim, dtype=np.float64)
        for gram, count in Counter(grams).items():
            v[_bucket(gram, self.dim)] += count
        return v / np.linalg.norm(v)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.ascontiguousarray(np.stack([self.vector(t) for t in texts]))


def make_title_key(tasks: Sequence[str] = ("index_generation",)) -> Callable[[str], str | None]:
    """Key function that maps a prompt of one of ``tasks`` to its ``Title:`` value."""
    wanted = frozenset(tasks)

    def key(prompt: str) -> str | None:
        if P.task_of(prompt) not in wanted:
            return None
        return P.labeled_value(prompt, "Title")

    return key


class ScriptedGenerationBackend:
    """Answers prompts from a fixed table.

    ``key_fn`` maps a prompt to its table key (identity by default; ``None``
    means "not handled"). Unhandled prompts go to ``fallback``, else get
    ``default``, else raise ``BackendError(Malformed)`` in strict mode.
    """

    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        *,
        key_fn: Callable[[str], str | None] | None = None,
        default: str | None = None,
        fallback: GenerationBackend | None = None,
        strict: bool = True,
    ) -> None:
        self.responses = dict(responses or {})
        self.key_fn = key_fn
        self.default = default
        self.fallback = fallback
        self.strict = strict

    def register(self, key: str, response: str) -> None:
        self.responses[key] = response

    @classmethod
    def from_fixture_file(cls, path: str | Path, **kwargs: Any) -> ScriptedGenerationBackend:
        responses = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
                for name in ("key", "response"):
                    if not isinstance(rec.get(name), str):
                        raise ParseError("expected a string", line=lineno, field=name)
                responses[rec["key"]] = rec["response"]
        return cls(responses, **kwargs)

    def complete(self, prompt: str) -> str:
        key = self.key_fn(prompt) if self.key_fn is not None else prompt
        if key is not None and key in self.responses:
            return self.responses[key]
        if self.fallback is not None:
            return self.fallback.complete(prompt)
        if self.default is not None or not self.strict:
            return self.default or ""
        shown = key if key is not None else prompt[:60]
        raise BackendError(BackendErrorKind.MALFORMED, f"no scripted response for {shown!r}")


def salient_tokens(title: str) -> set[str]:
    """Entity-bearing tokens of an event: title tokens minus stopwords."""
    return content_tokens(title)


def union_sentences(base: str, incoming: str) -> str:
    """Sentences of ``base`` followed by the novel sentences of ``incoming``."""
    seen: dict[str, None] = dict.fromkeys(split_sentences(base))
    for sentence in split_sentences(incoming):
        seen.setdefault(sentence, None)
    return " ".join(seen)


class ReferenceGenerationBackend:
    """Deterministic, purely extractive stand-in for an instruction-following LLM.

    Routes on the ``### task:`` line of the built-in templates.
    """

    def __init__(self, fact_sentences: int = 3) -> None:
        self.fact_sentences = fact_sentences

    def complete(self, prompt: str) -> str:
        task = P.task_of(prompt)
        handler = getattr(self, f"_{task}", None) if task else None
        if handler is None:
            raise BackendError(BackendErrorKind.MALFORMED, f"reference backend cannot handle task {task!r}")
        try:
            return handler(prompt)
        except (KeyError, ValueError, TypeError) as exc:
            raise BackendError(BackendErrorKind.MALFORMED, f"{task}: {exc}") from exc

    def _extract_event(self, prompt: str) -> str:
        article = P.extract_json_block(prompt)
        sentences = split_sentences(article["body"])
        title = article.get("title") or (sentences[0] if sentences else "")
        reply = {
            "title": title.strip(),
            "time": None,
            "fact": " ".join(sentences[: self.fact_sentences]),
            "locations": [],
            "domain": None,
        }
        return json.dumps(reply, ensure_ascii=False)

    def _merge_events(self, prompt: str) -> str:
        records = P.extract_json_block(prompt)
        base, incoming = records["base"], records["incoming"]
        return json.dumps(
            {"title": base["title"], "fact": union_sentences(base["fact"], incoming["fact"])},
            ensure_ascii=False,
        )

    def _index_generation(self, prompt: str) -> str:
        title = P.labeled_value(prompt, "Title") or ""
        locations = [x.strip() for x in (P.labeled_value(prompt, "Locations") or "").split(";") if x.strip()]
        fact = P.labeled_value(prompt, "Fact") or ""
        stem = title.rstrip(".!?")
        factual = [stem] + [f"{stem} {loc}" for loc in locations]
        factual += [s.rstrip(".!?") for s in split_sentences(fact)]
        search = [f"what is the latest on {stem}?", f"what happened with {stem}?"]
        question = [f"why is {stem} in the headlines?"]
        lines = ["{Reason}", f"Key entities: {', '.join(sorted(salient_tokens(title)))}"]
        for header, items in (
            ("{Factual queries}", factual),
            ("{Search queries}", search),
            ("{Question queries}", question),
        ):
            lines.append(header)
            lines.extend(f"{i}. {q}" for i, q in enumerate(items, start=1))
        return "\n".join(lines)

    def _post_filter(self, prompt: str) -> str:
        salient = salient_tokens(P.labeled_value(prompt, "Title") or "")
        kept = [q for q in candidate_lines(prompt) if content_tokens(q) & salient]
        return "\n".join(["{Filter queries}", *kept])


def candidate_lines(prompt: str) -> list[str]:
    """Phrases listed as ``- phrase`` under the ``## Candidate phrases`` header."""
    out: list[str] = []
    inside = False
    for line in prompt.splitlines():
        if line.startswith("## "):
            inside = line.strip() == "## Candidate phrases"
            continue
        if inside and line.startswith("- "):
            out.append(line[2:].strip())
    return out


class JaccardRelationBackend:
    def __init__(self, threshold: float = 0.5) -> None:
        self.threshold = threshold

    def classify(self, a: Any, b: Any) -> RelationVerdict:
        if not a.fact.strip() or not b.fact.strip():
            raise ValueError("relation classification needs non-empty facts")
        if jaccard(tokenize(a.fact), tokenize(b.fact)) >= self.threshold:
            return RelationVerdict.SAME_EVENT
        return RelationVerdict.DISTINCT


class WindowRewriter:
    def __init__(self, window: int = 2) -> None:
        self.window = window

    def rewrite(self, history: Sequence[str], current: str) -> str:
        if not current.strip():
            raise ValueError("current turn must be non-empty")
        recent = list(history)[-self.window :] if self.window else []
        return " ".join([*recent, current])


def _strip_labels(block: str) -> str:
    # blocks are "label: value" lines; labels are layout, not content
    return "\n".join(line.split(": ", 1)[1] if ": " in line else line for line in block.splitlines())


class OverlapReranker:
    def score(self, query_block: str, event_block: str) -> float:
        query = content_tokens(_strip_labels(query_block))
        if not query:
            return 0.0
        event = content_tokens(_strip_labels(event_block))
        return len(query & event) / len(query)


# =============================================================================
# Instrumentation
# =============================================================================


class Counted:
    """Proxy that counts calls per method; thread-safe."""

    def __init__(self, inner: Any) -> None:
        self.inner = inner
        self.calls: Counter[str] = Counter()
        self._lock = threading.Lock()

    def __getattr__(self, name: str) -> Any:
        attr = getattr(self.inner, name)
        if not callable(attr):
            return attr

        def wrapper(*args: Any, **kwargs: Any) -> Any:
            with self._lock:
                self.calls[name] += 1
            return attr(*args, **kwargs)

        return wrapper

    def reset(self) -> None:
        with self._lock:
            self.calls.clear()


# =============================================================================
# Live HTTP backends
# =============================================================================


@dataclass
class Endpoint:
    """One capability's HTTP endpoint. Auth header value comes from ``api_key_env``."""

    url: str
    timeout: float = DEFAULT_TIMEOUT
    api_key_env: str | None = None
    headers: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, cfg: Mapping[str, Any]) -> Endpoint:
        base = str(cfg["base_url"]).rstrip("/") if "base_url" in cfg else ""
        path = str(cfg.get("path", ""))
        url = str(cfg["url"]) if "url" in cfg else base + path
        if not url:
            raise KeyError("url")
        return cls(
            url=url,
            timeout=float(cfg.get("timeout", DEFAULT_TIMEOUT)),
            api_key_env=cfg.get("api_key_env"),
            headers=dict(cfg.get("headers", {})),
        )

    def post(self, payload: Mapping[str, Any]) -> dict[str, Any]:
        headers = {"Content-Type": "application/json", **self.headers}
        if self.api_key_env:
            token = os.environ.get(self.api_key_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(
            self.url, data=json.dumps(payload).encode("utf-8"), headers=headers, method="POST"
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
        except (socket.timeout, TimeoutError) as exc:
            raise BackendError(BackendErrorKind.TIMEOUT, f"{self.url}: {exc}") from exc
        except urllib.error.HTTPError as exc:
            raise BackendError(BackendErrorKind.UNAVAILABLE, f"{self.url}: HTTP {exc.code}") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise BackendError(BackendErrorKind.TIMEOUT, f"{self.url}: {exc.reason}") from exc
            raise BackendError(BackendErrorKind.UNAVAILABLE, f"{self.url}: {exc.reason}") from exc
        except OSError as exc:
            raise BackendError(BackendErrorKind.UNAVAILABLE, f"{self.url}: {exc}") from exc
        try:
            data = json.loads(body)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise BackendError(BackendErrorKind.MALFORMED, f"{self.url}: response is not JSON") from exc
        if not isinstance(data, dict):
            raise BackendError(BackendErrorKind.MALFORMED, f"{self.url}: response is not an object")
        return data


def _expect(data: Mapping[str, Any], name: str, kind: Any, url: str) -> Any:
    value = data.get(name)
    if isinstance(value, bool) and kind is not bool or not isinstance(value, kind):
        raise BackendError(BackendErrorKind.MALFORMED, f"{url}: missing or bad {name!r}")
    return value


class LiveEmbeddingBackend:
    """POST ``{"texts": [...]}`` -> ``{"embeddings": [[...], ...]}``."""

    def __init__(self, endpoint: Endpoint) -> None:
        self.endpoint = endpoint

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        data = self.endpoint.post({"texts": list(texts)})
        rows = _expect(data, "embeddings", list, self.endpoint.url)
        if len(rows) != len(texts):
            raise BackendError(
                BackendErrorKind.MALFORMED,
                f"{self.endpoint.url}: got {len(rows)} embeddings for {len(texts)} texts",
            )
        if not rows:
            return np.zeros((0, 0))
        try:
            matrix = np.asarray(rows, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise BackendError(BackendErrorKind.MALFORMED, "ragged or non-numeric embeddings") from exc
        if matrix.ndim != 2:
            raise BackendError(BackendErrorKind.MALFORMED, "ragged embeddings")
        return normalize_rows(matrix)


class LiveGenerationBackend:
    """POST ``{"prompt": ...}`` -> ``{"text": ...}``."""

    def __init__(self, endpoint: Endpoint) -> None:
        self.endpoint = endpoint

    def complete(self, prompt: str) -> str:
        return _expect(self.endpoint.post({"prompt": prompt}), "text", str, self.endpoint.url)


class LiveRelationBackend:
    """POST ``{"a": {title, fact}, "b": {title, fact}}`` -> ``{"verdict": "SameEvent"|"Distinct"}``."""

    def __init__(self, endpoint: Endpoint) -> None:
        self.endpoint = endpoint

    def classify(self, a: Any, b: Any) -> RelationVerdict:
        payload = {
            "a": {"title": a.title, "fact": a.fact},
            "b": {"title": b.title, "fact": b.fact},
        }
        verdict = _expect(self.endpoint.post(payload), "verdict", str, self.endpoint.url)
        try:
            return RelationVerdict(verdict)
        except ValueError as exc:
            raise BackendError(BackendErrorKind.MALFORMED, f"unknown verdict {verdict!r}") from exc


class LiveRewriteBackend:
    """POST ``{"history": [...], "current": ...}`` -> ``{"query": ...}``."""

    def __init__(self, endpoint: Endpoint) -> None:
        self.endpoint = endpoint

    def rewrite(self, history: Sequence[str], current: str) -> str:
        data = self.endpoint.post({"history": list(history), "current": current})
        query = _expect(data, "query", str, self.endpoint.url)
        if not query.strip():
            raise BackendError(BackendErrorKind.MALFORMED, "rewriter returned an empty query")
        return query


class LiveRerankBackend:
    """POST ``{"instruction", "query", "passage"}`` to a reranker service.

    Accepts either ``{"probability": p}`` or a generative ``{"label": "Yes"|"No"}``
    optionally carrying ``"yes_probability"``; hard labels map to 1.0 / 0.0.
    """

    def __init__(self, endpoint: Endpoint, prompts: P.PromptLibrary | None = None) -> None:
        self.endpoint = endpoint
        self.prompts = prompts or P.DEFAULT_PROMPTS

    def score(self, query_block: str, event_block: str) -> float:
        instruction = self.prompts.render("rerank", query_block=query_block, event_block=event_block)
        data = self.endpoint.post({"instruction": instruction, "query": query_block, "passage": event_block})
        if "probability" in data:
            p = data["probability"]
        elif "yes_probability" in data:
            p = data["yes_probability"]
        elif "label" in data:
            label = str(data["label"]).strip().lower()
            if label not in ("yes", "no"):
                raise BackendError(BackendErrorKind.MALFORMED, f"unknown label {data['label']!r}")
            p = 1.0 if label == "yes" else 0.0
        else:
            raise BackendError(BackendErrorKind.MALFORMED, "reranker reply has no probability or label")
        if isinstance(p, bool) or not isinstance(p, (int, float)) or not 0.0 <= p <= 1.0:
            raise BackendError(BackendErrorKind.MALFORMED, f"probability out of range: {p!r}")
        return float(p)


__all__ = [
    "Backends",
    "Counted",
    "EmbeddingBackend",
    "Endpoint",
    "GenerationBackend",
    "HashedNgramEmbedder",
    "JaccardRelationBackend",
    "LiveEmbeddingBackend",
    "LiveGenerationBackend",
    "LiveRelationBackend",
    "LiveRerankBackend",
    "LiveRewriteBackend",
    "OverlapReranker",
    "ReferenceGenerationBackend",
    "RelationBackend",
    "RelationVerdict",
    "RerankBackend",
    "RewriteBackend",
    "ScriptedGenerationBackend",
    "WindowRewriter",
    "make_title_key",
    "normalize_rows",
    "salient_tokens",
    "union_sentences",
]
