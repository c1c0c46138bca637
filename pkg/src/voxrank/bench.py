"""HTTP load helpers for the latency and hot-reload scenarios."""

from __future__ import annotations

import http.client
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import time

import numpy as np


@dataclass
class LoadResult:
    latencies_ms: list = field(default_factory=list)
    versions: list = field(default_factory=list)  # model_version per successful response
    errors: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.latencies_ms)

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.latencies_ms, q)) if self.latencies_ms else float("nan")

    def summary(self) -> dict:
        return {
            "requests": self.n + len(self.errors),
            "errors": len(self.errors),
            "p50_ms": self.percentile(50),
            "p99_ms": self.percentile(99),
            "mean_ms": float(np.mean(self.latencies_ms)) if self.latencies_ms else float("nan"),
            "versions": sorted(set(self.versions)),
        }


class SearchClient:
    """Keep-alive JSON client for one server; one instance per thread."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host, self.port, self.timeout = host, port, timeout
        self._conn = None

    def _connection(self):
        if self._conn is None:
            self._conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
        return self._conn

    def request(self, method: str, path: str, body=None):
        payload = None if body is None else json.dumps(body).encode("utf-8")
        headers = {"Content-Type": "application/json"} if payload is not None else {}
        for attempt in (0, 1):
            conn = self._connection()
            try:
                conn.request(method, path, body=payload, headers=headers)
                resp = conn.getresponse()
                data = resp.read()
                break
            except (ConnectionError, http.client.HTTPException):
                self.close()
                if attempt:
                    raise
        ctype = resp.getheader("Content-Type", "")
        parsed = json.loads(data) if ctype.startswith("application/json") else data.decode("utf-8")
        return resp.status, parsed

    def search(self, body: dict):
        return self.request("POST", "/v1/search", body)

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()
            self._conn = None


def run_load(host: str, port: int, bodies, concurrency: int = 1) -> LoadResult:
    """Issue every search body; latency is client-side wall time per request."""
    result = LoadResult()
    lock = threading.Lock()
    local = threading.local()

    def one(body):
        client = getattr(local, "client", None)
        if client is None:
            client = local.client = SearchClient(host, port)
        t0 = time.perf_counter()
        try:
            status, resp = client.search(body)
        except Exception as exc:
            with lock:
                result.errors.append(repr(exc))
            return
        ms = (time.perf_counter() - t0) * 1000.0
        with lock:
            if status == 200:
                result.latencies_ms.append(ms)
                result.versions.append(resp["model_version"])
            else:
                result.errors.append(f"HTTP {status}: {resp}")

    if concurrency <= 1:
        for body in bodies:
            one(body)
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            list(pool.map(one, bodies))
    return result
