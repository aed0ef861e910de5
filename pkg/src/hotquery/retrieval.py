"""Exact inner-product retrieval over active index queries.

A :class:`RetrievalIndex` is immutable once built. Rebuilds produce a new
object that :class:`IndexPublisher` swaps in with a single reference
assignment, so readers always see one complete generation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch
from .index_generation import SEVEN_DAYS, IndexQuery, active_indexes

UNIT_TOL = 1e-6


@dataclass(frozen=True)
class Candidate:
    index_id: str
    event_id: str
    index_text: str
    similarity: float


@dataclass(frozen=True, eq=False)
class RetrievalIndex:
    index_ids: tuple[str, ...]
    event_ids: tuple[str, ...]
    texts: tuple[str, ...]
    matrix: np.ndarray
    built_at: int = 0
    generation: int = 1
    _id_rank: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        n = len(self.index_ids)
        if not (len(self.event_ids) == len(self.texts) == self.matrix.shape[0] == n):
            raise ValueError("index columns have different lengths")
        matrix = np.ascontiguousarray(self.matrix, dtype=np.float64)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        # rank of each index_id in lexicographic order, for tie-breaking
        rank = np.empty(n, dtype=np.int64)
        rank[sorted(range(n), key=self.index_ids.__getitem__)] = np.arange(n)
        rank.setflags(write=False)
        object.__setattr__(self, "_id_rank", rank)

    def __len__(self) -> int:
        return len(self.index_ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def entries(self) -> list[tuple[str, str, str, np.ndarray]]:
        return list(zip(self.index_ids, self.event_ids, self.texts, self.matrix))

    @classmethod
    def empty(cls, dim: int = 0, *, built_at: int = 0, generation: int = 1) -> RetrievalIndex:
        return cls((), (), (), np.zeros((0, dim)), built_at, generation)


def build_index(
    indexes: Iterable[IndexQuery],
    now: int,
    ttl_seconds: int = SEVEN_DAYS,
    *,
    generation: int = 1,
) -> RetrievalIndex:
    """Searchable form of the active subset of ``indexes``.

    Entries are sorted by (event_id, index_id) so equal inputs give equal builds.
    """
    active = active_indexes(indexes, now, ttl_seconds)
    missing = [q.index_id for q in active if q.embedding is None]
    if missing:
        raise ValueError(f"index queries without embeddings: {', '.join(missing)}")
    if not active:
        return RetrievalIndex.empty(built_at=now, generation=generation)

    dims: dict[int, list[str]] = {}
    for q in active:
        dims.setdefault(len(q.embedding), []).append(q.index_id)  # type: ignore[arg-type]
    if len(dims) > 1:
        majority = max(dims, key=lambda d: (len(dims[d]), d))
        offending = sorted(i for d, ids in dims.items() if d != majority for i in ids)
        raise DimensionMismatch(f"expected dimension {majority}", offending)

    seen: set[str] = set()
    for q in active:
        if q.index_id in seen:
            raise ValueError(f"duplicate index_id {q.index_id}")
        seen.add(q.index_id)

    active.sort(key=lambda q: (q.event_id, q.index_id))
    return RetrievalIndex(
        index_ids=tuple(q.index_id for q in active),
        event_ids=tuple(q.event_id for q in active),
        texts=tuple(q.text for q in active),
        matrix=np.array([q.embedding for q in active], dtype=np.float64),
        built_at=now,
        generation=generation,
    )


def similarities(idx: RetrievalIndex, query: np.ndarray) -> np.ndarray:
    """Inner product of ``query`` with every entry, in entry order.

    Row-wise multiply-and-sum rather than a BLAS product: each score depends
    only on its own row, so duplicated vectors always tie exactly.
    """
    return (idx.matrix * query).sum(axis=1)


def _check_query(idx: RetrievalIndex, query: Sequence[float] | np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1:
        raise DimensionMismatch(f"query must be a vector, got shape {q.shape}")
    if len(idx) and q.shape[0] != idx.dim:
        raise DimensionMismatch(f"query dimension {q.shape[0]} != index dimension {idx.dim}")
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > UNIT_TOL:
        raise ValueError(f"query embedding must be unit-norm (got {norm})")
    return q


def search(idx: RetrievalIndex, query: Sequence[float] | np.ndarray, k: int = 1) -> list[Candidate]:
    """Exact top-k by inner product; ties go to the smaller index_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = _check_query(idx, query)
    n = len(idx)
    if n == 0:
        return []
    scores = similarities(idx, q)
    k = min(k, n)
    if k < n:
        kth = np.partition(scores, n - k)[n - k]
        pool = np.flatnonzero(scores >= kth)
    else:
        pool = np.arange(n)
    order = pool[np.lexsort((idx._id_rank[pool], -scores[pool]))][:k]
    return [
        Candidate(idx.index_ids[i], idx.event_ids[i], idx.texts[i], float(scores[i])) for i in order
    ]


def gate(candidates: Iterable[Candidate], threshold: float) -> list[Candidate]:
    """Candidates with similarity strictly above ``threshold``, order kept."""
    return [c for c in candidates if c.similarity > threshold]


class IndexPublisher:
    """Holds the live index; one builder publishes, any number of readers read."""

    def __init__(self, initial: RetrievalIndex | None = None) -> None:
        self._current = initial if initial is not None else RetrievalIndex.empty(generation=0)
        self._write_lock = threading.Lock()

    @property
    def current(self) -> RetrievalIndex:
        return self._current

    def publish(self, idx: RetrievalIndex) -> RetrievalIndex:
        with self._write_lock:
            self._current = idx
        return idx

    def rebuild(self, indexes: Iterable[IndexQuery], now: int, ttl_seconds: int = SEVEN_DAYS) -> RetrievalIndex:
        with self._write_lock:
            idx = build_index(indexes, now, ttl_seconds, generation=self._current.generation + 1)
            self._current = idx
        return idx
