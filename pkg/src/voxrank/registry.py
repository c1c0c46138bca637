"""Versioned model store with an evaluation gate and a single champion.

State is held as one immutable snapshot that writers replace under a lock,
so readers never observe zero or two champions. A directory-backed registry
persists ``models/v<N>.json`` blobs plus ``manifest.json``; the manifest
names the champion and is replaced atomically.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from .errors import NoEvaluableSessions, NotEvaluated, RegistryUnavailable, UnknownVersion
from .ranker import RankingModel, bootstrap_model, rank

log = logging.getLogger(__name__)

NDCG_K = 10
HELDOUT_MODULUS = 5


class Status(str, enum.Enum):
    CANDIDATE = "candidate"
    CHAMPION = "champion"
    ARCHIVED = "archived"


@dataclass(frozen=True)
class EvalMetrics:
    ndcg_at_10: float
    mrr: float
    session_count: int

    def to_json(self) -> dict:
        return {"ndcg_at_10": self.ndcg_at_10, "mrr": self.mrr, "session_count": self.session_count}

    @classmethod
    def from_json(cls, obj) -> Optional["EvalMetrics"]:
        if obj is None:
            return None
        return cls(float(obj["ndcg_at_10"]), float(obj["mrr"]), int(obj["session_count"]))


@dataclass(frozen=True)
class ModelRecord:
    model: RankingModel
    status: Status
    metrics: Optional[EvalMetrics] = None
    created_at: float = 0.0

    @property
    def version(self) -> int:
        return self.model.version

    def to_json(self) -> dict:
        """Model blob fields plus status, metrics and created_at, flat."""
        return {
            **self.model.to_json(),
            "status": self.status.value,
            "metrics": None if self.metrics is None else self.metrics.to_json(),
            "created_at": self.created_at,
        }

    @classmethod
    def from_json(cls, obj) -> "ModelRecord":
        return cls(
            RankingModel.from_json(obj),
            Status(obj["status"]),
            EvalMetrics.from_json(obj.get("metrics")),
            float(obj.get("created_at", 0.0)),
        )


@dataclass(frozen=True)
class GatePolicy:
    min_sessions: int = 50


@dataclass(frozen=True)
class PromotionDecision:
    version: int
    promoted: bool
    reason: str


# --- metrics -----------------------------------------------------------------


def is_heldout(session_id: str) -> bool:
    """Deterministic 20% held-out split on a hash of the session id."""
    digest = hashlib.sha1(session_id.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % HELDOUT_MODULUS == 0


def dcg(gains: Sequence[float], k: int = NDCG_K) -> float:
    return sum(g / math.log2(i + 2) for i, g in enumerate(gains[:k]))


def session_metrics(ranked: Sequence[str], engaged, k: int = NDCG_K):
    """(ndcg@k, reciprocal rank) for one ranked list, or None if nothing engaged."""
    gains = [1.0 if pid in engaged else 0.0 for pid in ranked]
    n_rel = int(sum(gains))
    if n_rel == 0:
        return None
    ideal = dcg([1.0] * n_rel, k)
    ndcg = dcg(gains, k) / ideal
    rr = 0.0
    for i, g in enumerate(gains[:k]):
        if g:
            rr = 1.0 / (i + 1)
            break
    return ndcg, rr


def aggregate_metrics(lists: Iterable) -> EvalMetrics:
    """Average per-session metrics over ``(ranked_ids, engaged_ids)`` pairs."""
    ndcgs, rrs = [], []
    for ranked, engaged in lists:
        m = session_metrics(ranked, engaged)
        if m is not None:
            ndcgs.append(m[0])
            rrs.append(m[1])
    if not ndcgs:
        raise NoEvaluableSessions("no session has an engaged item")
    return EvalMetrics(math.fsum(ndcgs) / len(ndcgs), math.fsum(rrs) / len(rrs), len(ndcgs))


def evaluate_model(model: RankingModel, heldout_sessions: Sequence, session_items: Callable) -> EvalMetrics:
    """Re-rank each held-out session's impressions with ``model``.

    ``session_items(session)`` returns the ``(Candidate, FeatureVector)`` list
    for the session's impressed products (or None to skip the session).
    """
    lists = []
    for session in heldout_sessions:
        engaged = set(session.engagement)
        if not engaged:
            continue
        items = session_items(session)
        if not items:
            continue
        lists.append(([r.product_id for r in rank(model, items)], engaged))
    return aggregate_metrics(lists)


# --- registry ----------------------------------------------------------------


def _blob_path(directory: Path, version: int) -> Path:
    return directory / "models" / f"v{version}.json"


def _write_json_atomic(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _write_manifest(directory: Path, champion: int, updated_at: float) -> None:
    _write_json_atomic(directory / "manifest.json", {"champion_version": champion, "updated_at": updated_at})


@dataclass(frozen=True)
class _State:
    records: dict  # version -> ModelRecord, never mutated after publication
    champion: int


class ModelRegistry:
    def __init__(self, directory=None, clock: Callable[[], float] = time.time):
        self.directory = Path(directory) if directory is not None else None
        self._clock = clock
        self._write_lock = threading.Lock()
        self._state: Optional[_State] = None
        if self.directory is not None and (self.directory / "manifest.json").exists():
            self._state = self._read_disk()
        else:
            boot = ModelRecord(bootstrap_model(trained_at=0.0), Status.CHAMPION, None, 0.0)
            self._state = _State({1: boot}, 1)
            if self.directory is not None:
                self._save_all(self._state, self.directory)

    # persistence

    def _persist(self, state: _State, versions: Iterable[int], manifest: bool = False) -> None:
        if self.directory is None:
            return
        # blobs first: a crash before the manifest write leaves the old champion in charge
        for v in versions:
            _write_json_atomic(_blob_path(self.directory, v), state.records[v].to_json())
        if manifest:
            _write_manifest(self.directory, state.champion, self._clock())

    def _save_all(self, state: _State, directory: Path) -> None:
        for rec in state.records.values():
            _write_json_atomic(_blob_path(directory, rec.version), rec.to_json())
        _write_manifest(directory, state.champion, self._clock())

    def _read_disk(self) -> _State:
        try:
            manifest = json.loads((self.directory / "manifest.json").read_text(encoding="utf-8"))
            champion = int(manifest["champion_version"])
            records = {}
            for blob in sorted((self.directory / "models").glob("v*.json")):
                rec = ModelRecord.from_json(json.loads(blob.read_text(encoding="utf-8")))
                records[rec.version] = rec
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise RegistryUnavailable(f"cannot read registry at {self.directory}: {exc}") from exc
        if champion not in records:
            raise RegistryUnavailable(f"manifest names missing champion v{champion}")
        # the manifest is authoritative for which record is champion
        fixed = {}
        for v, rec in sorted(records.items()):
            if v == champion:
                status = Status.CHAMPION
            elif rec.status == Status.CHAMPION:
                status = Status.ARCHIVED
            else:
                status = rec.status
            fixed[v] = rec if rec.status == status else replace(rec, status=status)
        return _State(fixed, champion)

    def refresh(self) -> None:
        """Re-read a directory-backed registry (another process may have written it)."""
        if self.directory is None:
            return
        state = self._read_disk()
        with self._write_lock:
            self._state = state

    def peek_champion_version(self) -> int:
        """Champion version as currently recorded on disk (in memory if not directory-backed)."""
        if self.directory is None:
            return self._state.champion
        try:
            manifest = json.loads((self.directory / "manifest.json").read_text(encoding="utf-8"))
            return int(manifest["champion_version"])
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise RegistryUnavailable(f"cannot read manifest in {self.directory}: {exc}") from exc

    def save(self, directory) -> None:
        """Write every record and the manifest to ``directory``."""
        self._save_all(self._state, Path(directory))

    @classmethod
    def load(cls, directory) -> "ModelRegistry":
        directory = Path(directory)
        if not (directory / "manifest.json").exists():
            raise RegistryUnavailable(f"no registry manifest in {directory}")
        return cls(directory)

    # reads

    def get_champion(self) -> ModelRecord:
        state = self._state
        return state.records[state.champion]

    def get(self, version: int) -> ModelRecord:
        rec = self._state.records.get(version)
        if rec is None:
            raise UnknownVersion(version)
        return rec

    def records(self) -> list:
        """Consistent snapshot of every record, version-ascending."""
        state = self._state
        return [state.records[v] for v in sorted(state.records)]

    def latest_candidate(self) -> Optional[ModelRecord]:
        cands = [r for r in self.records() if r.status == Status.CANDIDATE]
        return cands[-1] if cands else None

    # writes

    def register(self, model: RankingModel, created_at: Optional[float] = None) -> int:
        """Add a trained model as a candidate; returns its new version."""
        with self._write_lock:
            state = self._state
            version = max(state.records) + 1
            last_created = max(r.created_at for r in state.records.values())
            created = self._clock() if created_at is None else created_at
            rec = ModelRecord(model.with_version(version), Status.CANDIDATE, None, max(created, last_created))
            new = _State({**state.records, version: rec}, state.champion)
            self._persist(new, [version])
            self._state = new
        return version

    def set_metrics(self, version: int, metrics: EvalMetrics) -> None:
        with self._write_lock:
            state = self._state
            if version not in state.records:
                raise UnknownVersion(version)
            rec = replace(state.records[version], metrics=metrics)
            new = _State({**state.records, version: rec}, state.champion)
            self._persist(new, [version])
            self._state = new

    def _switch(self, state: _State, version: int) -> _State:
        old = state.champion
        records = dict(state.records)
        if old != version:
            records[old] = replace(records[old], status=Status.ARCHIVED)
        records[version] = replace(records[version], status=Status.CHAMPION)
        return _State(records, version)

    def try_promote(self, version: int, policy: GatePolicy = GatePolicy()) -> PromotionDecision:
        with self._write_lock:
            state = self._state
            rec = state.records.get(version)
            if rec is None:
                raise UnknownVersion(version)
            if rec.metrics is None:
                raise NotEvaluated(version)
            champ = state.records[state.champion]
            if version == state.champion:
                decision = PromotionDecision(version, False, "already champion")
            elif rec.status != Status.CANDIDATE:
                decision = PromotionDecision(version, False, f"status is {rec.status.value}, not candidate")
            elif rec.metrics.session_count < policy.min_sessions:
                decision = PromotionDecision(version, False, "insufficient sessions")
            elif champ.metrics is None:
                decision = PromotionDecision(version, False, "champion not evaluated")
            elif rec.metrics.ndcg_at_10 > champ.metrics.ndcg_at_10:
                decision = PromotionDecision(version, True, "ndcg improved")
            elif rec.metrics.ndcg_at_10 == champ.metrics.ndcg_at_10:
                decision = PromotionDecision(version, False, "tie keeps champion")
            else:
                decision = PromotionDecision(version, False, "ndcg below champion")
            if decision.promoted:
                new = self._switch(state, version)
                self._persist(new, [state.champion, version], manifest=True)
                self._state = new
        log.info(
            "promotion v%d: %s (%s)", version, "promoted" if decision.promoted else "rejected", decision.reason
        )
        return decision

    def rollback(self, version: int) -> None:
        with self._write_lock:
            state = self._state
            rec = state.records.get(version)
            if rec is None:
                raise UnknownVersion(version)
            if rec.status == Status.CANDIDATE:
                raise ValueError(f"v{version} is a candidate; only archived models can be rolled back to")
            if version == state.champion:
                return
            new = self._switch(state, version)
            self._persist(new, [state.champion, version], manifest=True)
            self._state = new
        log.info("rolled back to v%d", version)
