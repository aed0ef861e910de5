"""Detection service: ``POST /detect`` and ``POST /admin/reload`` over HTTP.

All serving state (index generation plus the store snapshot it was built
against) lives in one immutable :class:`ServingState`. A request reads the
state reference once, so a concurrent reload can never hand it a mix of two
generations.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Iterable

from .backends import Backends
from .detection import DetectionConfig, compose_query, detect
from .errors import BackendError, HotQueryError, MissingEvent
from .event_store import StoreSnapshot
from .index_generation import SEVEN_DAYS, IndexQuery
from .retrieval import RetrievalIndex, build_index

logger = logging.getLogger(__name__)

MAX_HISTORY = 2

# returns the current store snapshot and index-query pool
Source = Callable[[], tuple[StoreSnapshot, Iterable[IndexQuery]]]


@dataclass(frozen=True)
class ServingState:
    index: RetrievalIndex
    store: StoreSnapshot

    @property
    def generation(self) -> int:
        return self.index.generation


class RequestError(ValueError):
    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


def parse_request(payload: Any) -> tuple[str, list[str]]:
    """Validate a detect request; unknown fields are ignored."""
    if not isinstance(payload, dict):
        raise RequestError("body", "expected a JSON object")
    q_o = payload.get("q_o")
    if not isinstance(q_o, str) or not q_o.strip():
        raise RequestError("q_o", "must be a non-empty string")
    q_h = payload.get("q_h", [])
    if q_h is None:
        q_h = []
    if not isinstance(q_h, list) or not all(isinstance(x, str) for x in q_h):
        raise RequestError("q_h", "must be an array of strings")
    if len(q_h) > MAX_HISTORY:
        raise RequestError("q_h", f"at most {MAX_HISTORY} history turns")
    return q_o, q_h


class DetectionService:
    def __init__(
        self,
        config: DetectionConfig,
        backends: Backends,
        source: Source,
        *,
        ttl_seconds: int = SEVEN_DAYS,
        now_fn: Callable[[], int] | None = None,
    ) -> None:
        self.config = config
        self.backends = backends
        self.source = source
        self.ttl_seconds = ttl_seconds
        self.now_fn = now_fn or (lambda: int(time.time()))
        self._reload_lock = threading.Lock()
        self._state = ServingState(RetrievalIndex.empty(generation=0), StoreSnapshot(revision=0))
        self.reload()

    @property
    def state(self) -> ServingState:
        return self._state

    def reload(self, now: int | None = None) -> ServingState:
        """Rebuild from the source and swap atomically; on failure the old state stays live."""
        with self._reload_lock:
            store, pool = self.source()
            when = self.now_fn() if now is None else int(now)
            index = build_index(pool, when, self.ttl_seconds, generation=self._state.generation + 1)
            state = ServingState(index, store)
            self._state = state
        logger.info("published index generation %d (%d entries)", state.generation, len(state.index))
        return state

    def handle_detect(self, payload: Any) -> tuple[int, dict[str, Any]]:
        try:
            q_o, q_h = parse_request(payload)
        except RequestError as exc:
            return HTTPStatus.BAD_REQUEST, {"error": "invalid request", "field": exc.field, "detail": str(exc)}
        state = self._state
        try:
            query = compose_query(self.backends.rewriter, q_h, q_o)
            result = detect(self.config, state.index, state.store, self.backends, query)
        except BackendError as exc:
            return HTTPStatus.BAD_GATEWAY, {"error": "backend failure", "kind": exc.kind.value, "detail": exc.detail}
        except MissingEvent as exc:
            return HTTPStatus.INTERNAL_SERVER_ERROR, {"error": "index/store skew", "event_id": exc.event_id}
        body: dict[str, Any] = {
            "trending": result.trending,
            "decided_by": result.decided_by.value,
            "generation": state.generation,
        }
        if result.trending:
            body["event_id"] = result.event_id
            body["event_title"] = state.store.events[result.event_id].title
            body["matched_index_id"] = result.matched_index_id
        if result.retrieval_similarity is not None:
            body["retrieval_similarity"] = result.retrieval_similarity
        if result.rerank_probability is not None:
            body["rerank_probability"] = result.rerank_probability
        return HTTPStatus.OK, body

    def handle_reload(self, payload: Any) -> tuple[int, dict[str, Any]]:
        now = payload.get("now") if isinstance(payload, dict) else None
        if now is not None and (isinstance(now, bool) or not isinstance(now, int)):
            return HTTPStatus.BAD_REQUEST, {"error": "invalid request", "field": "now"}
        try:
            state = self.reload(now)
        except (HotQueryError, OSError, ValueError) as exc:
            logger.error("reload failed, keeping generation %d: %s", self._state.generation, exc)
            return HTTPStatus.INTERNAL_SERVER_ERROR, {
                "error": "reload failed",
                "detail": str(exc),
                "generation": self._state.generation,
            }
        return HTTPStatus.OK, {"generation": state.generation, "entries": len(state.index)}

    def start_periodic_reload(self, interval: float) -> threading.Event:
        """Rebuild every ``interval`` seconds until the returned event is set."""
        stop = threading.Event()

        def loop() -> None:
            while not stop.wait(interval):
                try:
                    self.reload()
                except Exception:  # keep serving the previous generation
                    logger.exception("periodic reload failed")

        threading.Thread(target=loop, name="index-reload", daemon=True).start()
        return stop


class _Handler(BaseHTTPRequestHandler):
    service: DetectionService
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args: Any) -> None:
        logger.debug("%s - " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: dict[str, Any]) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _payload(self) -> Any:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw.strip():
            return {}
        return json.loads(raw)

    def do_POST(self) -> None:  # noqa: N802
        try:
            payload = self._payload()
        except (ValueError, UnicodeDecodeError):
            self._send(HTTPStatus.BAD_REQUEST, {"error": "invalid request", "field": "body"})
            return
        if self.path == "/detect":
            self._send(*self.service.handle_detect(payload))
        elif self.path == "/admin/reload":
            self._send(*self.service.handle_reload(payload))
        else:
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})

    def do_GET(self) -> None:  # noqa: N802
        if self.path == "/healthz":
            state = self.service.state
            self._send(HTTPStatus.OK, {"generation": state.generation, "entries": len(state.index)})
        else:
            self._send(HTTPStatus.NOT_FOUND, {"error": f"no route {self.path}"})


class _Server(ThreadingHTTPServer):
    # the stdlib default backlog of 5 resets connections under modest concurrency
    request_queue_size = 128
    daemon_threads = True


def make_server(service: DetectionService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    handler = type("DetectionHandler", (_Handler,), {"service": service})
    server = _Server((host, port), handler)
    return server
