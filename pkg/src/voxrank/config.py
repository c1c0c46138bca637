"""Server/system configuration and component wiring from a JSON config file."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .catalog import load_catalog
from .errors import RegistryUnavailable
from .feedback import EventLog, FeedbackIngestor, replay_profiles
from .pipeline import SearchPipeline, publish_catalog
from .query import load_lexicon
from .registry import GatePolicy, ModelRegistry
from .retrieval import DEFAULT_K
from .server import SearchService
from .store import FeatureKey, FeatureStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SystemConfig:
    catalog_path: str
    lexicon_path: str
    registry_dir: str
    event_log_path: str
    store_snapshot_path: str
    listen_addr: str = "127.0.0.1:8080"
    retrieve_k: int = DEFAULT_K
    poll_interval_s: float = 2.0
    auto_retrain: bool = True
    min_sessions: int = GatePolicy.min_sessions

    @classmethod
    def from_file(cls, path) -> "SystemConfig":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        base = Path(path).resolve().parent
        for key in ("catalog_path", "lexicon_path", "registry_dir", "event_log_path", "store_snapshot_path"):
            if key in obj and not os.path.isabs(obj[key]):
                obj[key] = str(base / obj[key])
        return cls(**obj)

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class System:
    config: SystemConfig
    pipeline: SearchPipeline
    store: FeatureStore
    registry: Optional[ModelRegistry]
    log: EventLog
    ingestor: FeedbackIngestor
    service: SearchService

    def save_store(self) -> int:
        return self.store.snapshot(self.config.store_snapshot_path)

    def close(self) -> None:
        self.log.close()


def rebuild_profiles(store: FeatureStore, events, catalog) -> int:
    profiles = replay_profiles(events, catalog)
    for cid, prof in sorted(profiles.items()):
        store.put(FeatureKey.user(cid), prof.to_payload(), now=prof.last_updated)
    return len(profiles)


def build_system(config: SystemConfig, fsync: bool = True, require_registry: bool = False) -> System:
    """Load every component named by ``config``.

    The store is restored from its snapshot when one exists, otherwise rebuilt
    from the catalog and event log. An unreadable registry leaves the service
    without a model (searches answer 503) unless ``require_registry``.
    """
    lexicon = load_lexicon(config.lexicon_path)
    catalog = load_catalog(config.catalog_path, lexicon)
    event_log = EventLog(config.event_log_path, fsync=fsync)
    store = FeatureStore()
    if os.path.exists(config.store_snapshot_path):
        store.restore(config.store_snapshot_path)
    else:
        publish_catalog(store, catalog)
        rebuild_profiles(store, event_log.events(), catalog)
    try:
        registry = ModelRegistry(config.registry_dir)
    except RegistryUnavailable:
        if require_registry:
            raise
        log.exception("registry unreadable at startup; serving 503 until reload succeeds")
        registry = None
    pipeline = SearchPipeline(catalog, lexicon, store, retrieve_k=config.retrieve_k)
    ingestor = FeedbackIngestor(event_log, store, catalog)
    service = SearchService(pipeline, registry, ingestor, registry_dir=config.registry_dir)
    return System(config, pipeline, store, registry, event_log, ingestor, service)
