"""In-process feature store shared by retrieval, ranking and serving.

Records are immutable; a put replaces the whole record for a key, so a read
always sees exactly one committed payload. Writes take a lock, reads do not.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional

from .errors import CorruptSnapshot, FileUnreadable, InvalidTtl

log = logging.getLogger(__name__)

QUERY_TTL_S = 24 * 3600

SNAPSHOT_FIELDS = ("namespace", "id", "payload", "version", "updated_at", "ttl_seconds")
_TRAILER_KEY = "__snapshot_records__"


class Namespace(str, enum.Enum):
    USER = "user"
    QUERY = "query"
    PRODUCT = "product"


@dataclass(frozen=True)
class FeatureKey:
    namespace: Namespace
    id: str

    def __post_init__(self):
        object.__setattr__(self, "namespace", Namespace(self.namespace))
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("feature key id must be a nonempty string")

    @classmethod
    def user(cls, id: str) -> "FeatureKey":
        return cls(Namespace.USER, id)

    @classmethod
    def query(cls, id: str) -> "FeatureKey":
        return cls(Namespace.QUERY, id)

    @classmethod
    def product(cls, id: str) -> "FeatureKey":
        return cls(Namespace.PRODUCT, id)


@dataclass(frozen=True, eq=True)
class FeatureRecord:
    key: FeatureKey
    payload: dict
    version: int
    updated_at: float
    ttl_seconds: Optional[int] = None

    __hash__ = None  # payload is a dict

    def expired(self, now: float) -> bool:
        return self.ttl_seconds is not None and self.updated_at + self.ttl_seconds < now

    def to_json(self) -> dict:
        payload = {
            k: sorted(v) if isinstance(v, frozenset) else v for k, v in sorted(self.payload.items())
        }
        return {
            "namespace": self.key.namespace.value,
            "id": self.key.id,
            "payload": payload,
            "version": self.version,
            "updated_at": self.updated_at,
            "ttl_seconds": self.ttl_seconds,
        }


def _clean_payload(payload: Mapping) -> dict:
    out = {}
    for name, value in payload.items():
        if not isinstance(name, str):
            raise TypeError(f"feature name must be str, got {name!r}")
        if isinstance(value, bool):
            raise TypeError(f"feature {name!r}: booleans are not a feature type")
        if isinstance(value, (int, float)):
            if not math.isfinite(value):
                raise ValueError(f"feature {name!r} is not finite")
            out[name] = value
        elif isinstance(value, str):
            out[name] = value
        elif isinstance(value, (set, frozenset, list, tuple)):
            if not all(isinstance(v, str) for v in value):
                raise TypeError(f"feature {name!r}: sets must contain only strings")
            out[name] = frozenset(value)
        else:
            raise TypeError(f"feature {name!r} has unsupported type {type(value).__name__}")
    return out


def _validate_ttl(ttl):
    if ttl is None:
        return None
    if isinstance(ttl, bool) or not isinstance(ttl, int) or ttl <= 0:
        raise InvalidTtl(f"ttl must be a positive integer number of seconds, got {ttl!r}")
    return ttl


class FeatureStore:
    def __init__(self, clock: Callable[[], float] = time.time):
        self._records: dict = {}
        self._write_lock = threading.Lock()
        self._listeners: list = []
        self._clock = clock

    def subscribe(self, listener: Callable[[FeatureKey], None]) -> None:
        """Register a callback invoked with the key after every committed put."""
        self._listeners.append(listener)

    def unsubscribe(self, listener) -> None:
        self._listeners.remove(listener)

    def put(self, key: FeatureKey, payload: Mapping, ttl: Optional[int] = None, now: Optional[float] = None) -> int:
        ttl = _validate_ttl(ttl)
        clean = _clean_payload(payload)
        now = self._clock() if now is None else now
        with self._write_lock:
            prev = self._records.get(key)
            version = 1 if prev is None else prev.version + 1
            self._records[key] = FeatureRecord(key, clean, version, float(now), ttl)
        for listener in list(self._listeners):
            try:
                listener(key)
            except Exception:  # a bad listener must not break writers
                log.exception("feature-store listener failed for %s", key)
        return version

    def get(self, key: FeatureKey, now: Optional[float] = None) -> Optional[FeatureRecord]:
        rec = self._records.get(key)
        if rec is None:
            return None
        now = self._clock() if now is None else now
        return None if rec.expired(now) else rec

    def get_batch(self, keys: Iterable[FeatureKey], now: Optional[float] = None) -> dict:
        now = self._clock() if now is None else now
        return {key: self.get(key, now) for key in keys}

    def records(self) -> list:
        """Every stored record, expired ones included, in key order."""
        recs = list(self._records.values())
        recs.sort(key=lambda r: (r.key.namespace.value, r.key.id))
        return recs

    def __len__(self) -> int:
        return len(self._records)

    def snapshot(self, path) -> int:
        """Write all records as JSON Lines, atomically; returns the record count.

        The last line is a trailer holding the record count, so a truncated
        file is detected on restore.
        """
        recs = self.records()
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for rec in recs:
                fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            fh.write(json.dumps({_TRAILER_KEY: len(recs)}) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        return len(recs)

    def restore(self, path) -> int:
        """Replace the store contents with a snapshot; returns the record count."""
        records = read_snapshot(path)
        with self._write_lock:
            self._records = {rec.key: rec for rec in records}
        return len(records)


def _record_from_json(obj, line_no: int) -> FeatureRecord:
    if not isinstance(obj, dict) or set(obj) != set(SNAPSHOT_FIELDS):
        raise CorruptSnapshot(line_no, "unexpected record keys")
    try:
        key = FeatureKey(Namespace(obj["namespace"]), obj["id"])
        if not isinstance(obj["payload"], dict):
            raise TypeError("payload must be an object")
        payload = _clean_payload(obj["payload"])
        version = obj["version"]
        if isinstance(version, bool) or not isinstance(version, int) or version < 1:
            raise ValueError("bad version")
        updated_at = obj["updated_at"]
        if isinstance(updated_at, bool) or not isinstance(updated_at, (int, float)):
            raise ValueError("bad updated_at")
        ttl = _validate_ttl(obj["ttl_seconds"])
    except (ValueError, TypeError, InvalidTtl) as exc:
        raise CorruptSnapshot(line_no, str(exc)) from exc
    return FeatureRecord(key, payload, version, float(updated_at), ttl)


def read_snapshot(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise FileUnreadable(path, str(exc)) from exc
    if lines and lines[-1] == "":
        lines.pop()
    else:
        raise CorruptSnapshot(len(lines), "missing final newline")
    records = []
    seen = set()
    for line_no, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptSnapshot(line_no, str(exc)) from exc
        if line_no == len(lines):
            if not (isinstance(obj, dict) and set(obj) == {_TRAILER_KEY}):
                raise CorruptSnapshot(line_no, "missing trailer")
            if obj[_TRAILER_KEY] != len(records):
                raise CorruptSnapshot(line_no, "record count mismatch")
            return records
        rec = _record_from_json(obj, line_no)
        if rec.key in seen:
            raise CorruptSnapshot(line_no, "duplicate key")
        seen.add(rec.key)
        records.append(rec)
    raise CorruptSnapshot(0, "empty snapshot file")
