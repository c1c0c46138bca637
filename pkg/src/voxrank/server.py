"""Real-time search service and its HTTP/1.1 JSON front end.

``SearchService`` is transport-free so the simulator can drive it directly;
``make_http_server`` exposes it over HTTP. The serving model is a single
reference swapped on reload; each request reads it once and uses that model
for its whole pipeline run.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .errors import DuplicateEventId, EmptyQuery, InvalidEvent, RegistryUnavailable
from .feedback import FeedbackEvent, FeedbackIngestor
from .pipeline import SearchPipeline
from .registry import ModelRegistry
from .text import tokenize

log = logging.getLogger(__name__)

MAX_K = 50


class BadRequest(ValueError):
    pass


class ServiceUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchRequest:
    query: str
    customer_id: Optional[str] = None
    k: int = 10

    def __post_init__(self):
        if not isinstance(self.query, str):
            raise BadRequest("query must be a string")
        if self.customer_id is not None and (not isinstance(self.customer_id, str) or not self.customer_id):
            raise BadRequest("customer_id must be a nonempty string when given")
        if isinstance(self.k, bool) or not isinstance(self.k, int) or not 1 <= self.k <= MAX_K:
            raise BadRequest(f"k must be an integer in [1, {MAX_K}]")
        if not tokenize(self.query):
            raise EmptyQuery(self.query)

    @classmethod
    def from_json(cls, obj) -> "SearchRequest":
        if not isinstance(obj, dict):
            raise BadRequest("body must be a JSON object")
        if "query" not in obj:
            raise BadRequest("missing field: query")
        return cls(query=obj["query"], customer_id=obj.get("customer_id"), k=obj.get("k", 10))


@dataclass(frozen=True)
class SearchResponse:
    results: list  # dicts: product_id, title, score, rank
    model_version: int
    served_at: float
    latency_ms: float

    def to_json(self) -> dict:
        return {
            "results": self.results,
            "model_version": self.model_version,
            "served_at": self.served_at,
            "latency_ms": self.latency_ms,
        }


class SearchService:
    def __init__(
        self,
        pipeline: SearchPipeline,
        registry: Optional[ModelRegistry],
        ingestor: Optional[FeedbackIngestor] = None,
        registry_dir=None,
    ):
        self.pipeline = pipeline
        self.registry = registry
        self.ingestor = ingestor
        # lets reload recover when the registry was unreadable at startup
        self.registry_dir = registry_dir
        self._model = None
        if registry is not None:
            self._model = registry.get_champion().model

    @property
    def model(self):
        return self._model

    @property
    def model_version(self) -> Optional[int]:
        model = self._model
        return None if model is None else model.version

    def handle_search(self, req: SearchRequest, now: Optional[float] = None, model=None) -> SearchResponse:
        """Run the pipeline for one request.

        ``model`` overrides the champion (offline replay and evaluation use it).
        """
        start = time.perf_counter()
        model = model if model is not None else self._model
        if model is None:
            raise ServiceUnavailable("no model loaded")
        served_at = time.time() if now is None else now
        ranked = self.pipeline.search(req.query, model, req.customer_id, req.k, now=now)
        catalog = self.pipeline.catalog
        results = [
            {"product_id": r.product_id, "title": catalog[r.product_id].title, "score": r.score, "rank": r.rank}
            for r in ranked
        ]
        latency_ms = (time.perf_counter() - start) * 1000.0
        return SearchResponse(results, model.version, served_at, latency_ms)

    def handle_feedback(self, body) -> FeedbackEvent:
        """Append one event and update the customer's profile.

        Raises InvalidEvent (-> 400) or DuplicateEventId (-> 409).
        """
        if self.ingestor is None:
            raise ServiceUnavailable("feedback ingestion is not configured")
        ev = body if isinstance(body, FeedbackEvent) else FeedbackEvent.from_json(body)
        self.ingestor.ingest(ev)
        return ev

    def reload_champion(self) -> int:
        """Swap in the registry's current champion; keeps the old model on failure."""
        try:
            if self.registry is None:
                if self.registry_dir is None:
                    raise RegistryUnavailable("no registry configured")
                self.registry = ModelRegistry.load(self.registry_dir)
            self.registry.refresh()
            model = self.registry.get_champion().model
        except RegistryUnavailable as exc:
            log.warning("reload failed (%s); still serving v%s", exc, self.model_version)
            raise
        if self._model is None or model.version != self._model.version or model != self._model:
            log.info("serving model v%s -> v%s", self.model_version, model.version)
            self._model = model
        return model.version

    def models(self) -> list:
        if self.registry is None:
            return []
        return [
            {"version": r.version, "status": r.status.value, "metrics": None if r.metrics is None else r.metrics.to_json()}
            for r in self.registry.records()
        ]


class RegistryPoller:
    """Background thread reloading the champion when the manifest changes.

    ``interval_s`` bounds staleness: the manifest is peeked twice per interval
    on fixed deadlines, so a promotion is served within one interval even when
    a peek or reload is slowed down by request load.
    """

    def __init__(self, service: SearchService, interval_s: float = 2.0):
        self.service = service
        self.interval_s = interval_s
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="registry-poller", daemon=True)

    def start(self) -> "RegistryPoller":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)

    def poll_once(self) -> None:
        registry = self.service.registry
        try:
            if registry is None or registry.peek_champion_version() != self.service.model_version:
                self.service.reload_champion()
        except RegistryUnavailable:
            pass  # reload_champion already logged it

    def _run(self) -> None:
        tick = self.interval_s / 2
        deadline = time.monotonic() + tick
        while not self._stop.wait(max(0.0, deadline - time.monotonic())):
            self.poll_once()
            deadline = max(deadline + tick, time.monotonic())


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    disable_nagle_algorithm = True  # headers and body go out in separate writes
    service: SearchService  # set on the subclass made by make_http_server

    def log_message(self, fmt, *args):
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _send(self, status: int, obj=None, text: Optional[str] = None) -> None:
        if text is not None:
            body, ctype = text.encode("utf-8"), "text/plain; charset=utf-8"
        else:
            body, ctype = json.dumps(obj).encode("utf-8"), "application/json; charset=utf-8"
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str, code: str) -> None:
        self._send(status, {"error": message, "code": code})

    def _body(self):
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            return json.loads(raw.decode("utf-8") or "null")
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise BadRequest(f"invalid JSON body: {exc}") from exc

    def do_GET(self):
        if self.path == "/healthz":
            self._send(200, text="ok")
        elif self.path == "/v1/models":
            self._send(200, self.service.models())
        else:
            self._error(404, f"no route for GET {self.path}", "not_found")

    def do_POST(self):
        try:
            body = self._body()
        except BadRequest as exc:
            self._error(400, str(exc), "bad_request")
            return
        try:
            if self.path == "/v1/search":
                resp = self.service.handle_search(SearchRequest.from_json(body))
                self._send(200, resp.to_json())
            elif self.path == "/v1/feedback":
                self.service.handle_feedback(body)
                self._send(202, {"accepted": True})
            elif self.path == "/v1/admin/reload":
                self._send(200, {"model_version": self.service.reload_champion()})
            else:
                self._error(404, f"no route for POST {self.path}", "not_found")
        except EmptyQuery:
            self._error(400, "query normalizes to zero tokens", "empty_query")
        except (BadRequest, InvalidEvent) as exc:
            self._error(400, str(exc), "bad_request")
        except DuplicateEventId as exc:
            self._error(409, str(exc), "duplicate_event_id")
        except (ServiceUnavailable, RegistryUnavailable) as exc:
            self._error(503, str(exc), "unavailable")
        except Exception as exc:  # keep the connection handler alive
            log.exception("unhandled error for %s", self.path)
            self._error(500, str(exc), "internal")


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    request_queue_size = 256  # the default backlog of 5 resets bursts of connects


def make_http_server(service: SearchService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    handler = type("SearchHandler", (_Handler,), {"service": service})
    return _Server((host, port), handler)


def parse_listen_addr(addr: str):
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)
