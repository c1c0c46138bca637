"""Closed-loop simulation: serve -> click -> ingest -> retrain -> gate -> reload.

Retraining on feature-store updates is debounced: the trigger only records
that user profiles changed, and the loop (or the server's retrain thread)
acts on it at most once per round/interval.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NoEvaluableSessions
from .feedback import EventLog, FeedbackIngestor, build_training_pairs, sessionize
from .pipeline import SearchPipeline, publish_catalog
from .query import parse_query
from .ranker import Hyperparams, train
from .registry import (
    EvalMetrics,
    GatePolicy,
    ModelRegistry,
    PromotionDecision,
    aggregate_metrics,
    evaluate_model,
    is_heldout,
)
from .retrieval import DEFAULT_K
from .server import SearchRequest, SearchService
from .sim import ClickModelParams, SyntheticWorld, cascade_clicks, relevance, sample_request, simulate_session
from .store import FeatureStore, Namespace

log = logging.getLogger(__name__)


class RetrainTrigger:
    """Feature-store listener that flags user-profile updates."""

    def __init__(self, namespaces=(Namespace.USER,)):
        self.namespaces = frozenset(namespaces)
        self._pending = 0
        self._lock = threading.Lock()

    def __call__(self, key) -> None:
        if key.namespace in self.namespaces:
            with self._lock:
                self._pending += 1

    @property
    def pending(self) -> int:
        return self._pending

    def consume(self) -> int:
        """Return the number of updates since the last call and reset it."""
        with self._lock:
            n, self._pending = self._pending, 0
        return n


@dataclass(frozen=True)
class CycleResult:
    candidate_version: Optional[int]
    pairs_trained: int
    candidate_metrics: Optional[EvalMetrics]
    decision: Optional[PromotionDecision]


def retrain_cycle(
    pipeline: SearchPipeline,
    registry: ModelRegistry,
    events: Sequence,
    hp: Hyperparams = Hyperparams(),
    gate: GatePolicy = GatePolicy(),
    now: Optional[float] = None,
    evaluate_champion: bool = True,
) -> CycleResult:
    """Train a candidate from the champion on the training split, evaluate on
    the held-out split, and offer it to the gate."""
    sessions = sessionize(events)
    train_sessions = [s for s in sessions if not is_heldout(s.session_id)]
    heldout = [s for s in sessions if is_heldout(s.session_id)]
    pairs = build_training_pairs(train_sessions, lambda s: pipeline.session_features(s, now))
    assert not any(is_heldout(p.session_id) for p in pairs), "held-out session leaked into training"
    if not pairs:
        return CycleResult(None, 0, None, None)

    champion = registry.get_champion()
    model = train(pairs, hp, init=champion.model, trained_at=now)
    version = registry.register(model, created_at=now)

    items = {s.session_id: pipeline.session_items(s, now) for s in heldout}

    def session_items(s):
        return items[s.session_id]

    try:
        metrics = evaluate_model(registry.get(version).model, heldout, session_items)
    except NoEvaluableSessions:
        return CycleResult(version, len(pairs), None, None)
    registry.set_metrics(version, metrics)
    if evaluate_champion and champion.metrics is None:
        registry.set_metrics(champion.version, evaluate_model(champion.model, heldout, session_items))
    decision = registry.try_promote(version, gate)
    return CycleResult(version, len(pairs), metrics, decision)


@dataclass(frozen=True)
class LoopConfig:
    serve_k: int = 10
    retrieve_k: int = DEFAULT_K
    eval_sessions: int = 500
    train: bool = True
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    gate: GatePolicy = field(default_factory=GatePolicy)
    click: ClickModelParams = field(default_factory=ClickModelParams)
    session_spacing_s: float = 600.0
    start_time: float = 1_700_000_000.0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class LoopReport:
    rounds: list
    config: dict
    seeds: dict

    def to_json(self) -> dict:
        return {"rounds": self.rounds, "config": self.config, "seeds": self.seeds}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def read(cls, path) -> "LoopReport":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(obj["rounds"], obj["config"], obj["seeds"])


@dataclass
class LoopSystem:
    """All components of one simulated deployment."""

    world: SyntheticWorld
    store: FeatureStore
    registry: ModelRegistry
    log: EventLog
    pipeline: SearchPipeline
    service: SearchService
    trigger: RetrainTrigger


def build_loop_system(world: SyntheticWorld, config: LoopConfig) -> LoopSystem:
    clock = lambda: config.start_time  # noqa: E731 - simulated time only
    store = FeatureStore(clock=clock)
    publish_catalog(store, world.catalog, now=config.start_time)
    registry = ModelRegistry(clock=clock)
    event_log = EventLog()
    pipeline = SearchPipeline(world.catalog, world.lexicon, store, retrieve_k=config.retrieve_k)
    ingestor = FeedbackIngestor(event_log, store, world.catalog)
    service = SearchService(pipeline, registry, ingestor)
    trigger = RetrainTrigger()
    store.subscribe(trigger)
    return LoopSystem(world, store, registry, event_log, pipeline, service, trigger)


def fresh_eval_workload(world: SyntheticWorld, config: LoopConfig) -> list:
    """Fixed (user, query) requests never fed back into the system."""
    rng = np.random.default_rng([world.seed, config.click.seed, 1])
    return [sample_request(world, rng) for _ in range(config.eval_sessions)]


def online_metrics(system: LoopSystem, model, workload, config: LoopConfig, now: float) -> EvalMetrics:
    """Serve each workload request with ``model``, simulate clicks, score them.

    Click randomness is seeded per request, so two models see the same draws.
    """
    lists = []
    for i, (user, query) in enumerate(workload):
        resp = system.service.handle_search(SearchRequest(query, user.customer_id, config.serve_k), now=now, model=model)
        ranked = [r["product_id"] for r in resp.results]
        if not ranked:
            continue
        head = parse_query(query, system.world.lexicon).head_terms
        rels = [relevance(user, system.world.catalog[pid], head, config.click) for pid in ranked]
        clicked, _ = cascade_clicks(rels, config.click, np.random.default_rng([config.click.seed, 2, i]))
        lists.append((ranked, set() if clicked is None else {ranked[clicked]}))
    return aggregate_metrics(lists)


def run_closed_loop(world: SyntheticWorld, rounds: int, sessions_per_round: int, config: LoopConfig = LoopConfig()) -> LoopReport:
    system = build_loop_system(world, config)
    workload = fresh_eval_workload(world, config)
    traffic_rng = np.random.default_rng([world.seed, config.click.seed, 0])
    click_rng = np.random.default_rng([config.click.seed, 3])
    now = config.start_time

    def entry(round_no, pairs, promoted, cycle: Optional[CycleResult]):
        champ = system.registry.get_champion()
        online = online_metrics(system, champ.model, workload, config, now)
        return {
            "round": round_no,
            "champion_version": champ.version,
            "ndcg_at_10": online.ndcg_at_10,
            "mrr": online.mrr,
            "eval_sessions": online.session_count,
            "gate_ndcg_at_10": None if champ.metrics is None else champ.metrics.ndcg_at_10,
            "pairs_trained": pairs,
            "promoted": promoted,
            "candidate_version": None if cycle is None else cycle.candidate_version,
            "candidate_ndcg_at_10": None if cycle is None or cycle.candidate_metrics is None
            else cycle.candidate_metrics.ndcg_at_10,
            "decision": None if cycle is None or cycle.decision is None else cycle.decision.reason,
        }

    report_rounds = [entry(0, 0, False, None)]
    system.trigger.consume()

    for round_no in range(1, rounds + 1):
        for s in range(sessions_per_round):
            user, query = sample_request(world, traffic_rng)
            resp = system.service.handle_search(SearchRequest(query, user.customer_id, config.serve_k), now=now)
            shown = [r["product_id"] for r in resp.results]
            if shown:
                sid = f"r{round_no:02d}-s{s:04d}"
                for ev in simulate_session(world, user, query, shown, config.click, click_rng, sid, now):
                    system.service.handle_feedback(ev)
            now += config.session_spacing_s

        cycle = None
        if system.trigger.consume() and config.train:
            cycle = retrain_cycle(
                system.pipeline, system.registry, system.log.events(), config.hyperparams, config.gate, now
            )
            system.service.reload_champion()
        promoted = bool(cycle and cycle.decision and cycle.decision.promoted)
        report_rounds.append(entry(round_no, 0 if cycle is None else cycle.pairs_trained, promoted, cycle))
        log.info("round %d: %s", round_no, report_rounds[-1])

    return LoopReport(
        rounds=report_rounds,
        config={"rounds": rounds, "sessions_per_round": sessions_per_round, "n_users": len(world.users),
                "n_products": len(world.catalog), **config.to_json()},
        seeds={"world": world.seed, "click": config.click.seed},
    )


class AutoRetrainer:
    """Server-mode retrain thread: at most one retrain cycle per interval,
    and only when user profiles changed since the last one."""

    def __init__(self, service: SearchService, event_log: EventLog, interval_s: float = 2.0,
                 hp: Hyperparams = Hyperparams(), gate: GatePolicy = GatePolicy()):
        self.service = service
        self.event_log = event_log
        self.interval_s = interval_s
        self.hp = hp
        self.gate = gate
        self.trigger = RetrainTrigger()
        service.pipeline.store.subscribe(self.trigger)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="auto-retrain", daemon=True)

    def start(self) -> "AutoRetrainer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=30)

    def run_once(self) -> Optional[CycleResult]:
        if not self.trigger.consume() or self.service.registry is None:
            return None
        result = retrain_cycle(self.service.pipeline, self.service.registry, self.event_log.events(),
                               self.hp, self.gate)
        if result.decision is not None and result.decision.promoted:
            self.service.reload_champion()
        return result

    def _run(self) -> None:
        while not self._stop.wait(self.interval_s):
            try:
                self.run_once()
            except Exception:
                log.exception("retrain cycle failed")
