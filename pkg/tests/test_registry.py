import json
import math
import random
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_ndcg_mrr
from voxrank.errors import NoEvaluableSessions, NotEvaluated, RegistryUnavailable, UnknownVersion
from voxrank.ranker import RankingModel, bootstrap_model
from voxrank.registry import (
    EvalMetrics,
    GatePolicy,
    ModelRegistry,
    Status,
    aggregate_metrics,
    evaluate_model,
    is_heldout,
)


def model(seed=0):
    return RankingModel(tuple(np.random.default_rng(seed).normal(size=8)))


def reg_with_candidate(cand_ndcg, champ_ndcg=0.60, sessions=100, directory=None):
    reg = ModelRegistry(directory, clock=lambda: 1.0)
    reg.set_metrics(1, EvalMetrics(champ_ndcg, 0.5, 100))
    v = reg.register(model())
    reg.set_metrics(v, EvalMetrics(cand_ndcg, 0.5, sessions))
    return reg, v


def test_fresh_registry_bootstrap():
    champ = ModelRegistry().get_champion()
    assert champ.version == 1 and champ.status == Status.CHAMPION
    assert champ.model.weights == bootstrap_model().weights


def test_single_item_metrics():
    m = aggregate_metrics([(["a"], {"a"})])
    assert (m.ndcg_at_10, m.mrr, m.session_count) == (1.0, 1.0, 1)


def test_second_of_two():
    m = aggregate_metrics([(["b", "a"], {"a"})])
    assert m.ndcg_at_10 == pytest.approx(1 / math.log2(3)) and round(m.ndcg_at_10, 4) == 0.6309
    assert m.mrr == 0.5


def test_skips_unengaged_sessions():
    m = aggregate_metrics([(["a", "b"], set()), (["a"], {"a"})])
    assert m.session_count == 1
    with pytest.raises(NoEvaluableSessions):
        aggregate_metrics([(["a"], set())])


def test_mrr_zero_outside_top10():
    ranked = [f"p{i}" for i in range(12)]
    m = aggregate_metrics([(ranked, {"p11"})])
    assert m.mrr == 0.0 and m.ndcg_at_10 == 0.0


@given(st.lists(st.booleans(), min_size=1, max_size=5).filter(any))
def test_metrics_match_permutation_oracle(gains):
    ranked = [f"p{i}" for i in range(len(gains))]
    engaged = {p for p, g in zip(ranked, gains) if g}
    m = aggregate_metrics([(ranked, engaged)])
    ndcg, mrr = brute_ndcg_mrr(ranked, engaged)
    assert abs(m.ndcg_at_10 - ndcg) <= 1e-12 and abs(m.mrr - mrr) <= 1e-12


def test_evaluate_model_reranks():
    class S:
        def __init__(self, sid, engaged):
            self.session_id, self.engagement = sid, engaged

    from voxrank.ranker import FeatureVector
    from voxrank.retrieval import Candidate

    def items(s):
        return [(Candidate("a", 1.0), FeatureVector(1, 0, 0, 0, 0, 0, 0, 0)),
                (Candidate("b", 0.5), FeatureVector(0.5, 1, 0, 0, 0, 0, 0, 0))]

    sessions = [S("x", {"b": "click"}), S("y", {})]
    boot = evaluate_model(bootstrap_model(), sessions, items)
    assert boot.session_count == 1 and boot.mrr == 0.5
    flipped = evaluate_model(RankingModel((0, 1, 0, 0, 0, 0, 0, 0)), sessions, items)
    assert flipped.ndcg_at_10 == 1.0


def test_heldout_fraction():
    frac = sum(is_heldout(f"session-{i}") for i in range(20000)) / 20000
    assert 0.18 < frac < 0.22
    assert is_heldout("abc") == is_heldout("abc")


def test_promote_rules():
    reg, v = reg_with_candidate(0.62)
    d = reg.try_promote(v)
    assert d.promoted and reg.get_champion().version == v
    assert reg.get(1).status == Status.ARCHIVED

    reg, v = reg_with_candidate(0.60)
    d = reg.try_promote(v)
    assert not d.promoted and d.reason == "tie keeps champion"

    reg, v = reg_with_candidate(0.9, sessions=10)
    assert reg.try_promote(v).reason == "insufficient sessions"

    reg, v = reg_with_candidate(0.5)
    assert reg.try_promote(v).reason == "ndcg below champion"
    assert reg.get_champion().version == 1


def test_promote_errors():
    reg = ModelRegistry()
    with pytest.raises(UnknownVersion):
        reg.try_promote(7)
    v = reg.register(model())
    with pytest.raises(NotEvaluated):
        reg.try_promote(v)
    reg.set_metrics(v, EvalMetrics(0.9, 0.9, 99))
    assert reg.try_promote(v).reason == "champion not evaluated"


def test_custom_floor():
    reg, v = reg_with_candidate(0.7, sessions=10)
    assert reg.try_promote(v, GatePolicy(min_sessions=10)).promoted


def test_rollback():
    reg, v = reg_with_candidate(0.62)
    reg.try_promote(v)
    reg.rollback(1)
    assert reg.get_champion().version == 1 and reg.get(v).status == Status.ARCHIVED
    with pytest.raises(UnknownVersion):
        reg.rollback(99)
    c = reg.register(model(5))
    with pytest.raises(ValueError):
        reg.rollback(c)


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 500))
def test_gate_never_promotes_worse(cand, champ, sessions):
    reg, v = reg_with_candidate(cand, champ, sessions)
    d = reg.try_promote(v)
    assert d.promoted == (cand > champ and sessions >= 50)


def test_champion_unique_under_concurrency():
    reg = ModelRegistry()
    reg.set_metrics(1, EvalMetrics(0.0, 0.0, 100))
    versions = []
    for i in range(30):
        v = reg.register(model(i))
        reg.set_metrics(v, EvalMetrics((i + 1) / 31, 0.5, 100))
        versions.append(v)
    bad = []
    stop = threading.Event()

    def observer():
        while not stop.is_set():
            champs = [r for r in reg.records() if r.status == Status.CHAMPION]
            if len(champs) != 1 or reg.get_champion().status != Status.CHAMPION:
                bad.append(champs)

    def mutator(seed):
        rng = random.Random(seed)
        for _ in range(200):
            v = rng.choice(versions)
            if rng.random() < 0.5:
                reg.try_promote(v)
            else:
                try:
                    reg.rollback(v)
                except ValueError:
                    pass

    obs = [threading.Thread(target=observer) for _ in range(2)]
    muts = [threading.Thread(target=mutator, args=(s,)) for s in range(4)]
    for t in obs + muts:
        t.start()
    for t in muts:
        t.join()
    stop.set()
    for t in obs:
        t.join()
    assert not bad
    assert sum(r.status == Status.CHAMPION for r in reg.records()) == 1


def test_persistence_round_trip(tmp_path):
    d = tmp_path / "reg"
    reg, v = reg_with_candidate(0.62, directory=d)
    reg.try_promote(v)
    c = reg.register(model(9), created_at=5.0)
    again = ModelRegistry.load(d)
    assert again.records() == reg.records()
    assert again.get_champion().version == v and again.get(c).status == Status.CANDIDATE
    manifest = json.loads((d / "manifest.json").read_text())
    assert set(manifest) == {"champion_version", "updated_at"} and manifest["champion_version"] == v
    assert sorted(p.name for p in (d / "models").iterdir()) == ["v1.json", "v2.json", "v3.json"]

    reg.save(tmp_path / "copy")
    assert ModelRegistry.load(tmp_path / "copy").records() == reg.records()


@pytest.mark.parametrize("seed", range(3))
def test_persistence_random_ops(tmp_path, seed):
    rng = random.Random(seed)
    d = tmp_path / "reg"
    reg = ModelRegistry(d, clock=lambda: 0.0)
    reg.set_metrics(1, EvalMetrics(0.1, 0.1, 60))
    for i in range(40):
        op = rng.random()
        if op < 0.4:
            v = reg.register(model(rng.randint(0, 10**6)))
            reg.set_metrics(v, EvalMetrics(rng.random(), rng.random(), rng.randint(0, 200)))
        elif op < 0.8:
            cand = reg.latest_candidate()
            if cand is not None:
                reg.try_promote(cand.version)
        else:
            archived = [r.version for r in reg.records() if r.status == Status.ARCHIVED]
            if archived:
                reg.rollback(rng.choice(archived))
        assert ModelRegistry.load(d).records() == reg.records()


def test_unreadable_registry(tmp_path):
    with pytest.raises(RegistryUnavailable):
        ModelRegistry.load(tmp_path / "none")
    d = tmp_path / "reg"
    ModelRegistry(d)
    (d / "manifest.json").write_text("{broken")
    with pytest.raises(RegistryUnavailable):
        ModelRegistry.load(d)
