"""Precision/recall bookkeeping, F1-optimal thresholds and the pointwise loss."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .backends import Backends, RewriteBackend
from .detection import (
    CompositeQuery,
    DecidedBy,
    DetectionConfig,
    DetectionResult,
    EventLookup,
    Mode,
    compose_query,
    detect,
    serialize_for_rerank,
)
from .errors import HotQueryError, LengthMismatch, ParseError
from .event_store import Event
from .retrieval import Candidate, RetrievalIndex

LOSS_EPS = 1e-12
FINETUNE_FORMAT = "hotquery.finetune/v1"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float


def confusion(preds: Sequence[bool], labels: Sequence[bool]) -> ConfusionCounts:
    if len(preds) != len(labels):
        raise LengthMismatch(len(preds), len(labels))
    p = np.asarray(preds, dtype=bool)
    y = np.asarray(labels, dtype=bool)
    return ConfusionCounts(
        tp=int(np.sum(p & y)),
        fp=int(np.sum(p & ~y)),
        tn=int(np.sum(~p & ~y)),
        fn=int(np.sum(~p & y)),
    )


def metrics(c: ConfusionCounts) -> Metrics:
    """Precision, recall and F1; any ratio with a zero denominator is 0."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(precision, recall, f1)


@dataclass
class ThresholdReport:
    grid: list[tuple[float, float, float, float]]  # (threshold, precision, recall, f1), ascending
    best_threshold: float
    best_f1: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "best_threshold": self.best_threshold,
            "best_f1": self.best_f1,
            "grid": [list(row) for row in self.grid],
        }


def sentinel_below(value: float) -> float:
    """A threshold strictly below ``value`` (so ``score > t`` keeps every score)."""
    t = value - max(1e-9, abs(value) * 1e-12)
    return t if t < value else float(np.nextafter(value, -np.inf))


def calibrate_threshold(scores: Sequence[float], labels: Sequence[bool]) -> ThresholdReport:
    """Pick the F1-maximising threshold for the rule ``score > threshold``.

    Candidates are every distinct score plus one value below the minimum, which
    covers every achievable operating point. Ties go to the higher threshold.
    """
    if len(scores) != len(labels):
        raise LengthMismatch(len(scores), len(labels))
    if not len(scores):
        raise ValueError("cannot calibrate on an empty score set")
    s = np.asarray(scores, dtype=np.float64)
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    y = np.asarray(labels, dtype=bool)
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    distinct = np.unique(s)
    thresholds = np.concatenate(([sentinel_below(float(distinct[0]))], distinct))
    # number of scores strictly above each threshold, per class
    tp = len(pos) - np.searchsorted(pos, thresholds, side="right")
    fp = len(neg) - np.searchsorted(neg, thresholds, side="right")

    grid = []
    best_i, best_f1 = 0, -1.0
    for i, t in enumerate(thresholds):
        c = ConfusionCounts(tp=int(tp[i]), fp=int(fp[i]), tn=len(neg) - int(fp[i]), fn=len(pos) - int(tp[i]))
        m = metrics(c)
        grid.append((float(t), m.precision, m.recall, m.f1))
        if m.f1 >= best_f1:
            best_i, best_f1 = i, m.f1
    return ThresholdReport(grid=grid, best_threshold=float(thresholds[best_i]), best_f1=best_f1)


def pointwise_loss(y: int | bool, y_hat: float, eps: float = LOSS_EPS) -> float:
    """Binary cross-entropy of one prediction; ``y_hat`` is clamped to [eps, 1-eps]."""
    if y not in (0, 1):
        raise ValueError("label must be 0 or 1")
    p = min(max(float(y_hat), eps), 1.0 - eps)
    if y:
        return -math.log(p)
    return -math.log(1.0 - p)


# =============================================================================
# Datasets and replay export
# =============================================================================


@dataclass(frozen=True)
class LabeledExample:
    query: CompositeQuery
    label: bool
    gold_event_id: str | None = None


def _records(path: str | Path) -> Iterable[tuple[int, dict[str, Any]]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("expected a JSON object", line=lineno)
            yield lineno, rec


def load_labeled_dataset(path: str | Path, rewriter: RewriteBackend) -> list[LabeledExample]:
    """Read ``{q_o, q_h, label, gold_event_id?}`` lines and compose each query."""
    out = []
    for lineno, rec in _records(path):
        q_o = rec.get("q_o")
        if not isinstance(q_o, str) or not q_o.strip():
            raise ParseError("q_o must be a non-empty string", line=lineno, field="q_o")
        q_h = rec.get("q_h", [])
        if not isinstance(q_h, list) or not all(isinstance(x, str) for x in q_h):
            raise ParseError("q_h must be a list of strings", line=lineno, field="q_h")
        label = rec.get("label")
        if label not in (True, False, 0, 1):
            raise ParseError("label must be a boolean", line=lineno, field="label")
        gold = rec.get("gold_event_id")
        out.append(LabeledExample(compose_query(rewriter, q_h, q_o), bool(label), gold))
    return out


def read_scored_file(path: str | Path) -> tuple[list[float], list[bool]]:
    """Read ``{"score": x, "label": bool}`` lines."""
    scores, labels = [], []
    for lineno, rec in _records(path):
        score = rec.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ParseError("score must be a number", line=lineno, field="score")
        label = rec.get("label")
        if label not in (True, False, 0, 1):
            raise ParseError("label must be a boolean", line=lineno, field="label")
        scores.append(float(score))
        labels.append(bool(label))
    return scores, labels


def export_finetune_pairs(
    replay: Iterable[tuple[CompositeQuery, Candidate, Event, bool]],
    path: str | Path,
    *,
    window_seconds: int | None = None,
    now: int | None = None,
) -> int:
    """Write reranker training pairs; returns the number of records.

    With ``window_seconds`` only pairs whose event was updated within the
    window before ``now`` are kept.
    """
    if window_seconds is not None and now is None:
        raise ValueError("window_seconds needs now")
    rows = []
    for query, cand, event, label in replay:
        if window_seconds is not None and now - event.last_update >= window_seconds:
            continue
        query_block, event_block = serialize_for_rerank(query, event, cand.index_text)
        rows.append(
            {
                "query_block": query_block,
                "event_block": event_block,
                "label": int(bool(label)),
                "event_id": event.event_id,
                "index_id": cand.index_id,
            }
        )
    header = {"format": FINETUNE_FORMAT, "records": len(rows)}
    lines = [json.dumps(header)] + [json.dumps(r, ensure_ascii=False) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(rows)


# =============================================================================
# Pipeline evaluation
# =============================================================================


@dataclass(frozen=True)
class StageReport:
    counts: ConfusionCounts
    metrics: Metrics

    @classmethod
    def of(cls, preds: Sequence[bool], labels: Sequence[bool]) -> StageReport:
        c = confusion(preds, labels)
        return cls(c, metrics(c))

    def to_dict(self) -> dict[str, Any]:
        return {**asdict(self.counts), **asdict(self.metrics)}


@dataclass
class EvaluationReport:
    mode: Mode
    n: int
    coverage: float
    end_to_end: StageReport
    retrieval: StageReport
    reranker: StageReport | None
    errors: list[tuple[int, str]] = field(default_factory=list)
    results: list[DetectionResult | None] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "n": self.n,
            "errors": len(self.errors),
            "coverage": self.coverage,
            "end_to_end": self.end_to_end.to_dict(),
            "retrieval": self.retrieval.to_dict(),
            "reranker": self.reranker.to_dict() if self.reranker is not None else None,
        }

    def format_text(self) -> str:
        lines = [f"mode: {self.mode.value}", f"examples: {self.n} (errors: {len(self.errors)})",
                 f"coverage: {self.coverage:.4f}"]
        sections = [("end-to-end", self.end_to_end), ("retrieval stage", self.retrieval)]
        if self.reranker is not None:
            sections.append(("reranker stage (gated examples)", self.reranker))
        for name, stage in sections:
            c, m = stage.counts, stage.metrics
            lines.append(
                f"{name}: P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f} "
                f"(tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn})"
            )
        return "\n".join(lines)


def evaluate_pipeline(
    cfg: DetectionConfig,
    idx: RetrievalIndex,
    store: EventLookup,
    backends: Backends,
    dataset: Sequence[LabeledExample],
    *,
    workers: int = 1,
) -> EvaluationReport:
    """Run :func:`detect` on every example and score each cascade stage.

    Failed examples are tallied in ``errors`` and left out of the stage
    metrics; ``coverage`` is the share of the whole dataset flagged trending.
    """

    def run(example: LabeledExample) -> DetectionResult | str:
        try:
            return detect(cfg, idx, store, backends, example.query)
        except HotQueryError as exc:
            return f"{type(exc).__name__}: {exc}"

    if workers > 1 and len(dataset) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, dataset))
    else:
        outcomes = [run(x) for x in dataset]

    errors: list[tuple[int, str]] = []
    results: list[DetectionResult | None] = []
    e2e_p, e2e_y, ret_p, rer_p, rer_y = [], [], [], [], []
    for i, (example, out) in enumerate(zip(dataset, outcomes)):
        if isinstance(out, str):
            errors.append((i, out))
            results.append(None)
            continue
        results.append(out)
        e2e_p.append(out.trending)
        e2e_y.append(example.label)
        passed_gate = out.decided_by is not DecidedBy.RETRIEVAL_GATE
        ret_p.append(passed_gate)
        if passed_gate and out.decided_by is DecidedBy.RERANKER:
            rer_p.append(out.trending)
            rer_y.append(example.label)

    flagged = sum(e2e_p)
    return EvaluationReport(
        mode=cfg.mode,
        n=len(dataset),
        coverage=flagged / len(dataset) if dataset else 0.0,
        end_to_end=StageReport.of(e2e_p, e2e_y),
        retrieval=StageReport.of(ret_p, e2e_y),
        reranker=StageReport.of(rer_p, rer_y) if cfg.mode is Mode.TWO_STAGE else None,
        errors=errors,
        results=results,
    )
