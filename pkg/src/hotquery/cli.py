"""Command line entry point: ``hotquery <command> --config cfg.yaml``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from filelock import FileLock, Timeout

from .calibration import calibrate_threshold, evaluate_pipeline, load_labeled_dataset, read_scored_file
from .config import AppConfig, build_backends, load_config
from .detection import Mode
from .errors import ConfigError, HotQueryError, StoreLocked
from .event_store import EventStore, load_snapshot, save_snapshot
from .hot_selection import select_hot
from .index_generation import generate_all, load_indexes, save_indexes
from .ingestion import consolidate, read_articles
from .retrieval import build_index
from .service import DetectionService, make_server

logger = logging.getLogger("hotquery")


def _now(args: argparse.Namespace) -> int:
    return int(args.now) if getattr(args, "now", None) is not None else int(time.time())


def _lock(config: AppConfig) -> FileLock:
    assert config.paths.store is not None
    return FileLock(str(config.paths.store) + ".lock", timeout=0)


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    return p


def cmd_ingest(config: AppConfig, args: argparse.Namespace) -> int:
    articles_path = _require_file(args.articles)
    if config.paths.store is None:
        raise ConfigError("paths.store is not configured")
    report_path = Path(args.report) if args.report else articles_path.with_suffix(".report.jsonl")
    try:
        with _lock(config):
            store = load_snapshot(config.paths.store) if config.paths.store.exists() else EventStore()
            batch = read_articles(articles_path)
            ing = config.ingestion
            report = consolidate(
                store,
                ing.policy,
                build_backends(config),
                batch,
                ing.k,
                strict=ing.strict,
                default_model_score=ing.default_model_score,
                default_domain=ing.default_domain,
                workers=ing.workers,
                prompts=config.prompts,
            )
            save_snapshot(store, config.paths.store)
    except Timeout:
        raise StoreLocked(f"store {config.paths.store} is locked by another writer") from None
    report.write(report_path)
    print(
        f"created={report.count('created')} merged={report.count('merged')} "
        f"rejected={report.count('rejected')} errors={report.count('error')} "
        f"events={len(store.events)} report={report_path}"
    )
    return 1 if report.has_errors else 0


def cmd_select_hot(config: AppConfig, args: argparse.Namespace) -> int:
    config.require("store")
    store = load_snapshot(config.paths.store)  # type: ignore[arg-type]
    hot = select_hot(config.hot, store.events.values(), _now(args))
    for s in hot:
        event = store.events[s.event_id]
        if args.json:
            c = s.components
            print(json.dumps({
                "event_id": s.event_id, "score": s.score, "title": event.title,
                "model_score": c.model_score, "domain_weight": c.domain_weight,
                "count_factor": c.count_factor, "temporal_factor": c.temporal_factor,
            }))
        else:
            print(f"{s.event_id}\t{s.score:.6f}\t{event.title}")
    return 0


def cmd_gen_index(config: AppConfig, args: argparse.Namespace) -> int:
    config.require("store")
    if config.paths.index is None and not args.output:
        raise ConfigError("paths.index is not configured")
    out = Path(args.output) if args.output else config.paths.index
    now = _now(args)
    store = load_snapshot(config.paths.store)  # type: ignore[arg-type]
    hot = [store.events[s.event_id] for s in select_hot(config.hot, store.events.values(), now)]
    backends = build_backends(config)
    indexes = generate_all(
        backends.generator,
        backends.embedder,
        hot,
        config.generation,
        now,
        filter_backend=backends.filter,
        prompts=config.prompts,
    )
    save_indexes(indexes, out)  # type: ignore[arg-type]
    print(f"hot_events={len(hot)} index_queries={len(indexes)} output={out}")
    return 0


def cmd_calibrate(config: AppConfig, args: argparse.Namespace) -> int:
    scores, labels = read_scored_file(_require_file(args.scored))
    if not scores:
        raise ConfigError(f"{args.scored}: no scored examples")
    report = calibrate_threshold(scores, labels)
    if args.output:
        Path(args.output).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"best_threshold": report.best_threshold, "best_f1": report.best_f1}))
    return 0


def _load_serving(config: AppConfig):
    config.require("store", "index")
    return load_snapshot(config.paths.store).snapshot(), load_indexes(config.paths.index)  # type: ignore[arg-type]


def cmd_eval(config: AppConfig, args: argparse.Namespace) -> int:
    dataset_path = _require_file(args.dataset)
    detection = config.detection
    if args.mode:
        detection = type(detection)(**{**detection.__dict__, "mode": Mode(args.mode)})
    backends = build_backends(config)
    store, pool = _load_serving(config)
    idx = build_index(pool, _now(args), config.generation.ttl_seconds)
    dataset = load_labeled_dataset(dataset_path, backends.rewriter)
    report = evaluate_pipeline(detection, idx, store, backends, dataset)
    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        print(report.format_text())
        print(json.dumps(report.to_dict()))
    return 0


def cmd_serve(config: AppConfig, args: argparse.Namespace) -> int:
    backends = build_backends(config)
    now_fn = (lambda: int(args.now)) if args.now is not None else None
    service = DetectionService(
        config.detection,
        backends,
        lambda: _load_serving(config),
        ttl_seconds=config.generation.ttl_seconds,
        now_fn=now_fn,
    )
    host = args.host or config.service.host
    port = args.port if args.port is not None else config.service.port
    server = make_server(service, host, port)
    stop = service.start_periodic_reload(config.service.reload_interval)
    print(f"serving on http://{host}:{server.server_address[1]} (generation {service.state.generation})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hotquery", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, func, help: str, now: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="YAML config file")
        if now:
            p.add_argument("--now", type=int, help="pin the clock (epoch seconds)")
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "consolidate an article batch into the event store")
    p.add_argument("articles", help="line-delimited article records")
    p.add_argument("--report", help="where to write the per-article report")

    p = add("select-hot", cmd_select_hot, "list hot events")
    p.add_argument("--json", action="store_true")

    p = add("gen-index", cmd_gen_index, "generate index queries for hot events")
    p.add_argument("--output", help="index file (defaults to paths.index)")

    p = add("calibrate", cmd_calibrate, "F1-optimal threshold from scored examples", now=False)
    p.add_argument("scored", help='line-delimited {"score": x, "label": bool} records')
    p.add_argument("--output", help="write the full threshold grid as JSON")

    p = add("eval", cmd_eval, "evaluate the cascade on a labeled dataset")
    p.add_argument("dataset", help="line-delimited {q_o, q_h, label, gold_event_id?} records")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--json", action="store_true")

    p = add("serve", cmd_serve, "run the detection service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        return args.func(config, args)
    except (HotQueryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
