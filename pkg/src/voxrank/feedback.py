"""Click-stream and add-to-cart feedback: event log, sessions, profiles, pairs."""

from __future__ import annotations

import enum
import json
import math
import os
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Optional, Sequence

from .catalog import Catalog, Product
from .errors import CustomerMismatch, DuplicateEventId, FileUnreadable, InvalidEvent, MalformedRecord
from .ranker import TrainingPair
from .store import FeatureKey, FeatureStore

HALF_LIFE_S = 30 * 24 * 3600
PRUNE_BELOW = 1e-9


class EventType(str, enum.Enum):
    IMPRESSION = "impression"
    CLICK = "click"
    ATC = "atc"
    PURCHASE = "purchase"
    REJECT = "reject"


ENGAGEMENTS = frozenset({EventType.CLICK, EventType.ATC, EventType.PURCHASE})
PAIR_WEIGHT = {EventType.CLICK: 1.0, EventType.ATC: 2.0, EventType.PURCHASE: 3.0}
REJECT_PAIR_WEIGHT = 1.0
PROFILE_WEIGHT = {
    EventType.PURCHASE: 1.0,
    EventType.ATC: 0.5,
    EventType.CLICK: 0.25,
    EventType.REJECT: -0.5,
    EventType.IMPRESSION: 0.0,
}

EVENT_FIELDS = ("event_id", "session_id", "customer_id", "query_text", "product_id", "event_type", "position", "timestamp")


@dataclass(frozen=True)
class FeedbackEvent:
    event_id: str
    session_id: str
    customer_id: str
    query_text: str
    product_id: str
    event_type: EventType
    position: int
    timestamp: float

    def __post_init__(self):
        for name in ("event_id", "session_id", "customer_id", "product_id"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise InvalidEvent(f"{name} must be a nonempty string")
        if not isinstance(self.query_text, str):
            raise InvalidEvent("query_text must be a string")
        try:
            object.__setattr__(self, "event_type", EventType(self.event_type))
        except ValueError:
            raise InvalidEvent(f"unknown event_type {self.event_type!r}") from None
        if isinstance(self.position, bool) or not isinstance(self.position, int) or self.position < 1:
            raise InvalidEvent("position must be an integer >= 1")
        ts = self.timestamp
        if isinstance(ts, bool) or not isinstance(ts, (int, float)) or not math.isfinite(ts):
            raise InvalidEvent("timestamp must be a finite number")
        object.__setattr__(self, "timestamp", float(ts))

    @classmethod
    def from_json(cls, obj) -> "FeedbackEvent":
        if not isinstance(obj, dict):
            raise InvalidEvent("event must be a JSON object")
        missing = [k for k in EVENT_FIELDS if k not in obj]
        if missing:
            raise InvalidEvent(f"missing fields: {', '.join(missing)}")
        return cls(**{k: obj[k] for k in EVENT_FIELDS})

    def to_json(self) -> dict:
        out = {k: getattr(self, k) for k in EVENT_FIELDS}
        out["event_type"] = self.event_type.value
        return out


def read_events(path) -> list:
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(path, str(exc)) from exc
    events = []
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                events.append(FeedbackEvent.from_json(json.loads(line)))
            except (json.JSONDecodeError, InvalidEvent) as exc:
                raise MalformedRecord(line_no, str(exc)) from exc
    return events


class EventLog:
    """Append-only event log, optionally backed by a JSON Lines file.

    An existing file is read back on open. ``fsync=True`` forces each append to
    disk before returning.
    """

    def __init__(self, path=None, fsync: bool = False):
        self.path = path
        self._fsync = fsync
        self._lock = threading.Lock()
        self._events: list = []
        self._ids: set = set()
        self._fh = None
        if path is not None:
            if os.path.exists(path):
                for ev in read_events(path):
                    if ev.event_id in self._ids:
                        raise DuplicateEventId(ev.event_id)
                    self._ids.add(ev.event_id)
                    self._events.append(ev)
            self._fh = open(path, "a", encoding="utf-8")

    def append(self, ev: FeedbackEvent) -> None:
        with self._lock:
            if ev.event_id in self._ids:
                raise DuplicateEventId(ev.event_id)
            if self._fh is not None:
                self._fh.write(json.dumps(ev.to_json(), sort_keys=True) + "\n")
                self._fh.flush()
                if self._fsync:
                    os.fsync(self._fh.fileno())
            self._ids.add(ev.event_id)
            self._events.append(ev)

    def __contains__(self, event_id) -> bool:
        return event_id in self._ids

    def events(self) -> list:
        with self._lock:
            return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


@dataclass(frozen=True)
class Session:
    session_id: str
    customer_id: str
    query_text: str
    events: tuple
    impressions: tuple  # product_ids in shown order
    positions: dict = field(compare=False, repr=False)  # product_id -> shown position

    @cached_property
    def engagement(self) -> dict:
        """Strongest engagement per product: product_id -> EventType."""
        best: dict = {}
        for ev in self.events:
            if ev.event_type in ENGAGEMENTS:
                cur = best.get(ev.product_id)
                if cur is None or PAIR_WEIGHT[ev.event_type] > PAIR_WEIGHT[cur]:
                    best[ev.product_id] = ev.event_type
        return best

    @cached_property
    def rejected(self) -> tuple:
        return tuple(dict.fromkeys(ev.product_id for ev in self.events if ev.event_type == EventType.REJECT))

    def position_of(self, product_id: str) -> int:
        pos = self.positions.get(product_id)
        if pos is not None:
            return pos
        return min(ev.position for ev in self.events if ev.product_id == product_id)


def sessionize(events: Iterable[FeedbackEvent]) -> list:
    """Group events by session_id (sessions in id order, events by timestamp)."""
    groups: dict = {}
    for ev in events:
        groups.setdefault(ev.session_id, []).append(ev)
    sessions = []
    for sid in sorted(groups):
        evs = sorted(groups[sid], key=lambda e: e.timestamp)  # stable: ties keep log order
        by_pos: dict = {}
        for ev in evs:
            if ev.event_type == EventType.IMPRESSION:
                by_pos.setdefault(ev.position, ev.product_id)
        positions: dict = {}
        for pos in sorted(by_pos):
            positions.setdefault(by_pos[pos], pos)
        impressions = tuple(sorted(positions, key=positions.get))
        first = evs[0]
        sessions.append(Session(sid, first.customer_id, first.query_text, tuple(evs), impressions, positions))
    return sessions


@dataclass(frozen=True)
class PairSpec:
    session_id: str
    positive: str
    negative: str
    positive_position: int
    negative_position: int
    weight: float


def pair_specs(session: Session) -> list:
    """Skip-above pairs plus reject pairs for one session, in canonical order."""
    engaged = session.engagement
    specs = []
    for pid, etype in engaged.items():
        p = session.position_of(pid)
        for neg in session.impressions:
            q = session.positions[neg]
            if q < p and neg not in engaged:
                specs.append((0, PairSpec(session.session_id, pid, neg, p, q, PAIR_WEIGHT[etype])))
    for neg in session.rejected:
        q = session.position_of(neg)
        for pid in engaged:
            if pid != neg:
                specs.append((1, PairSpec(session.session_id, pid, neg, session.position_of(pid), q, REJECT_PAIR_WEIGHT)))
    specs.sort(key=lambda t: (t[1].session_id, t[1].positive_position, t[1].negative_position, t[0]))
    return [s for _, s in specs]


def build_training_pairs(sessions: Sequence[Session], featurize: Callable) -> list:
    """Materialize pair specs into TrainingPairs.

    ``featurize(session)`` returns ``{product_id: FeatureVector}`` for the
    session's products, computed from the current store and catalog. Sessions
    it cannot featurize (returns None) are skipped.
    """
    pairs = []
    for session in sorted(sessions, key=lambda s: s.session_id):
        specs = pair_specs(session)
        if not specs:
            continue
        features = featurize(session)
        if features is None:
            continue
        for spec in specs:
            x_pos, x_neg = features.get(spec.positive), features.get(spec.negative)
            if x_pos is None or x_neg is None:
                continue
            pairs.append(TrainingPair(x_pos, x_neg, spec.weight, session.session_id))
    return pairs


@dataclass(frozen=True)
class UserProfile:
    customer_id: str
    product_affinity: dict = field(default_factory=dict)
    brand_affinity: dict = field(default_factory=dict)
    facet_affinity: dict = field(default_factory=dict)
    last_updated: float = 0.0

    __hash__ = None

    @cached_property
    def facet_norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.facet_affinity.values()))

    def to_payload(self) -> dict:
        payload = {"customer_id": self.customer_id, "last_updated": self.last_updated}
        payload.update({f"product:{k}": v for k, v in self.product_affinity.items()})
        payload.update({f"brand:{k}": v for k, v in self.brand_affinity.items()})
        payload.update({f"facet:{k}": v for k, v in self.facet_affinity.items()})
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "UserProfile":
        maps = {"product": {}, "brand": {}, "facet": {}}
        for name, value in payload.items():
            kind, sep, rest = name.partition(":")
            if sep and kind in maps:
                maps[kind][rest] = value
        return cls(
            payload["customer_id"], maps["product"], maps["brand"], maps["facet"], float(payload["last_updated"])
        )


def decay_factor(elapsed: float, half_life: float = HALF_LIFE_S) -> float:
    return 2.0 ** (-max(elapsed, 0.0) / half_life)


def _decay(scores: dict, factor: float) -> dict:
    if factor == 1.0:
        return dict(scores)
    return {k: v * factor for k, v in scores.items()}


def _pruned(scores: dict) -> dict:
    return {k: v for k, v in sorted(scores.items()) if abs(v) >= PRUNE_BELOW}


def decay_profile(profile: UserProfile, now: float, half_life: float = HALF_LIFE_S) -> UserProfile:
    factor = decay_factor(now - profile.last_updated, half_life)
    return UserProfile(
        profile.customer_id,
        _pruned(_decay(profile.product_affinity, factor)),
        _pruned(_decay(profile.brand_affinity, factor)),
        _pruned(_decay(profile.facet_affinity, factor)),
        max(now, profile.last_updated),
    )


def update_user_profile(
    profile: Optional[UserProfile],
    ev: FeedbackEvent,
    product: Product,
    now: Optional[float] = None,
    half_life: float = HALF_LIFE_S,
) -> UserProfile:
    """Decay the profile to ``now`` (default: event time) and apply one event."""
    if profile is None:
        profile = UserProfile(ev.customer_id, last_updated=ev.timestamp)
    if ev.customer_id != profile.customer_id:
        raise CustomerMismatch(f"event for {ev.customer_id!r} applied to profile of {profile.customer_id!r}")
    now = ev.timestamp if now is None else now
    # out-of-order events are applied without growing older scores
    factor = decay_factor(now - profile.last_updated, half_life)
    products = _decay(profile.product_affinity, factor)
    brands = _decay(profile.brand_affinity, factor)
    facets = _decay(profile.facet_affinity, factor)

    w = PROFILE_WEIGHT[ev.event_type]
    if w != 0.0:
        products[product.product_id] = products.get(product.product_id, 0.0) + w
        if product.brand:
            brands[product.brand] = brands.get(product.brand, 0.0) + w
        for facet in product.facets:
            facets[facet] = facets.get(facet, 0.0) + w
    return UserProfile(
        profile.customer_id,
        _pruned(products),
        _pruned(brands),
        _pruned(facets),
        max(now, profile.last_updated),
    )


def replay_profiles(events: Iterable[FeedbackEvent], catalog: Catalog, half_life: float = HALF_LIFE_S) -> dict:
    """Rebuild every customer's profile from scratch, in log order."""
    profiles: dict = {}
    for ev in events:
        product = catalog.get(ev.product_id)
        if product is None:
            continue
        profiles[ev.customer_id] = update_user_profile(profiles.get(ev.customer_id), ev, product, half_life=half_life)
    return profiles


class FeedbackIngestor:
    """Appends events and keeps per-customer profiles in the feature store."""

    def __init__(self, log: EventLog, store: FeatureStore, catalog: Catalog, half_life: float = HALF_LIFE_S):
        self.log = log
        self.store = store
        self.catalog = catalog
        self.half_life = half_life
        self._locks: dict = {}
        self._locks_guard = threading.Lock()

    def _customer_lock(self, customer_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(customer_id, threading.Lock())

    def profile(self, customer_id: str) -> Optional[UserProfile]:
        rec = self.store.get(FeatureKey.user(customer_id))
        return None if rec is None else UserProfile.from_payload(rec.payload)

    def ingest(self, ev: FeedbackEvent) -> UserProfile:
        product = self.catalog.get(ev.product_id)
        if product is None:
            raise InvalidEvent(f"unknown product_id {ev.product_id!r}")
        self.log.append(ev)
        with self._customer_lock(ev.customer_id):
            rec = self.store.get(FeatureKey.user(ev.customer_id), now=ev.timestamp)
            current = None if rec is None else UserProfile.from_payload(rec.payload)
            updated = update_user_profile(current, ev, product, half_life=self.half_life)
            self.store.put(FeatureKey.user(ev.customer_id), updated.to_payload(), now=ev.timestamp)
        return updated
