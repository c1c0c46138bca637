"""Command-line entry point: ``voxrank <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from .catalog import save_catalog
from .config import SystemConfig, build_system, rebuild_profiles
from .errors import NoEvaluableSessions, VoxrankError
from .feedback import build_training_pairs, sessionize
from .loop import AutoRetrainer, LoopConfig, LoopReport, run_closed_loop
from .pipeline import publish_catalog
from .query import load_lexicon, parse_query, save_lexicon
from .ranker import Hyperparams, train
from .registry import GatePolicy, evaluate_model, is_heldout
from .server import RegistryPoller, make_http_server, parse_listen_addr
from .sim import generate_world
from .store import FeatureStore

log = logging.getLogger("voxrank")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _system(args, **kw):
    if not args.config:
        raise SystemExit("--config PATH is required for this command")
    return build_system(SystemConfig.from_file(args.config), **kw)


def _split(system):
    sessions = sessionize(system.log.events())
    return (
        [s for s in sessions if not is_heldout(s.session_id)],
        [s for s in sessions if is_heldout(s.session_id)],
    )


def cmd_gen_data(args) -> int:
    out = Path(args.out or "data")
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(args.seed, args.users, args.products)
    save_catalog(world.catalog, out / "catalog.jsonl")
    save_lexicon(world.lexicon, out / "lexicon.json")
    users = [{"customer_id": u.customer_id, "brand_pref": u.brand_pref, "facet_pref": u.facet_pref} for u in world.users]
    (out / "users.json").write_text(json.dumps(users, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    config = {
        "catalog_path": "catalog.jsonl",
        "lexicon_path": "lexicon.json",
        "registry_dir": "registry",
        "event_log_path": "events.jsonl",
        "store_snapshot_path": "store.jsonl",
        "listen_addr": "127.0.0.1:8080",
        "retrieve_k": 100,
        "poll_interval_s": 2.0,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    _emit({"out": str(out), "products": len(world.catalog), "users": len(world.users), "seed": args.seed})
    return 0


def cmd_ingest_catalog(args) -> int:
    system = _system(args)
    n_products = publish_catalog(system.store, system.pipeline.catalog)
    n_records = system.save_store()
    _emit({"products": n_products, "store_records": n_records,
           "facets": len(system.pipeline.catalog.facet_vocabulary),
           "brands": len(system.pipeline.catalog.brand_vocabulary)})
    return 0


def cmd_parse(args) -> int:
    if args.lexicon:
        lexicon = load_lexicon(args.lexicon)
    elif args.config:
        lexicon = load_lexicon(SystemConfig.from_file(args.config).lexicon_path)
    else:
        raise SystemExit("parse needs --lexicon or --config")
    _emit(parse_query(" ".join(args.query), lexicon).to_json())
    return 0


def cmd_train(args) -> int:
    system = _system(args, require_registry=True)
    train_sessions, _ = _split(system)
    pairs = build_training_pairs(train_sessions, system.pipeline.session_features)
    hp = Hyperparams(seed=args.seed if args.seed is not None else Hyperparams.seed)
    model = train(pairs, hp, init=system.registry.get_champion().model)
    version = system.registry.register(model)
    _emit({"version": version, "pairs": len(pairs), "weights": list(model.weights)})
    return 0


def cmd_evaluate(args) -> int:
    system = _system(args, require_registry=True)
    _, heldout = _split(system)
    reg = system.registry
    if args.version is not None:
        targets = [args.version]
    else:
        cand = reg.latest_candidate()
        targets = [cand.version] if cand else []
        if reg.get_champion().metrics is None:
            targets.insert(0, reg.get_champion().version)
    out = {}
    for v in targets:
        try:
            metrics = evaluate_model(reg.get(v).model, heldout, system.pipeline.session_items)
        except NoEvaluableSessions as exc:
            out[str(v)] = {"error": str(exc)}
            continue
        reg.set_metrics(v, metrics)
        out[str(v)] = metrics.to_json()
    _emit(out)
    return 0


def cmd_promote(args) -> int:
    system = _system(args, require_registry=True)
    version = args.version if args.version is not None else getattr(system.registry.latest_candidate(), "version", None)
    if version is None:
        raise SystemExit("no candidate to promote")
    decision = system.registry.try_promote(version, GatePolicy(system.config.min_sessions))
    _emit({"version": version, "promoted": decision.promoted, "reason": decision.reason})
    return 0 if decision.promoted else 1


def cmd_rollback(args) -> int:
    system = _system(args, require_registry=True)
    system.registry.rollback(args.target)
    _emit({"champion_version": system.registry.get_champion().version})
    return 0


def cmd_serve(args) -> int:
    system = _system(args)
    cfg = system.config
    host, port = parse_listen_addr(cfg.listen_addr)
    server = make_http_server(system.service, host, port)
    poller = RegistryPoller(system.service, cfg.poll_interval_s).start()
    retrainer = None
    if cfg.auto_retrain:
        retrainer = AutoRetrainer(system.service, system.log, cfg.poll_interval_s,
                                  gate=GatePolicy(cfg.min_sessions)).start()
    log.info("serving on http://%s:%d (model v%s)", host, server.server_address[1], system.service.model_version)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        poller.stop()
        if retrainer is not None:
            retrainer.stop()
        system.save_store()
        system.close()
    return 0


def _concurrent_scenario(args) -> dict:
    from .bench import run_load
    from .loop import LoopConfig, build_loop_system, fresh_eval_workload

    world = generate_world(args.seed, args.users, args.products)
    system = build_loop_system(world, LoopConfig())
    server = make_http_server(system.service, "127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        workload = fresh_eval_workload(world, LoopConfig(eval_sessions=args.sessions))
        bodies = [{"query": q, "customer_id": u.customer_id, "k": 10} for u, q in workload]
        result = run_load("127.0.0.1", server.server_address[1], bodies, concurrency=args.concurrency)
    finally:
        server.shutdown()
        server.server_close()
    return result.summary()


def cmd_simulate(args) -> int:
    if args.concurrent:
        _emit(_concurrent_scenario(args))
        return 0
    world = generate_world(args.seed, args.users, args.products)
    config = LoopConfig(train=not args.no_train)
    report = run_closed_loop(world, args.rounds, args.sessions, config)
    if args.out:
        report.write(args.out)
    print_report(report)
    return 0


def cmd_replay(args) -> int:
    system = _system(args)
    store = FeatureStore()
    publish_catalog(store, system.pipeline.catalog)
    n = rebuild_profiles(store, system.log.events(), system.pipeline.catalog)
    out = args.out or system.config.store_snapshot_path
    records = store.snapshot(out)
    _emit({"events": len(system.log), "profiles": n, "store_records": records, "snapshot": str(out)})
    return 0


def print_report(report: LoopReport) -> None:
    print(f"{'round':>5} {'champion':>8} {'ndcg@10':>8} {'mrr':>7} {'pairs':>6}  decision")
    for r in report.rounds:
        print(f"{r['round']:>5} {r['champion_version']:>8} {r['ndcg_at_10']:>8.4f} {r['mrr']:>7.4f} "
              f"{r['pairs_trained']:>6}  {r.get('decision') or '-'}")
    base, final = report.rounds[0]["ndcg_at_10"], report.rounds[-1]["ndcg_at_10"]
    print(f"lift: {final / base:.4f}x")


def cmd_report(args) -> int:
    if args.path:
        print_report(LoopReport.read(args.path))
        return 0
    system = _system(args)
    _emit(system.service.models())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxrank", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", metavar="PATH")
        p.set_defaults(fn=fn)
        return p

    p = add("gen-data", cmd_gen_data, "generate a synthetic catalog, lexicon and config")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--users", type=int, default=50)
    p.add_argument("--products", type=int, default=2000)
    p.add_argument("--out", metavar="DIR")

    add("ingest-catalog", cmd_ingest_catalog, "load the catalog and publish product features to the store")

    p = add("parse", cmd_parse, "parse a query with the configured lexicon")
    p.add_argument("--lexicon", metavar="PATH")
    p.add_argument("query", nargs="+")

    p = add("train", cmd_train, "train a candidate from the event log")
    p.add_argument("--seed", type=int)

    p = add("evaluate", cmd_evaluate, "evaluate models on the held-out split")
    p.add_argument("--version", type=int)

    p = add("promote", cmd_promote, "offer a candidate to the promotion gate")
    p.add_argument("--version", type=int)

    p = add("rollback", cmd_rollback, "make an archived version champion again")
    p.add_argument("target", type=int)

    add("serve", cmd_serve, "run the HTTP inference server")

    p = add("simulate", cmd_simulate, "run the closed-loop simulator")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--sessions", type=int, default=500)
    p.add_argument("--users", type=int, default=50)
    p.add_argument("--products", type=int, default=2000)
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--no-train", action="store_true")
    p.add_argument("--concurrent", action="store_true", help="run the HTTP latency stress scenario instead")
    p.add_argument("--concurrency", type=int, default=8)

    p = add("replay", cmd_replay, "rebuild user profiles from the event log and write a store snapshot")
    p.add_argument("--out", metavar="PATH")

    p = add("report", cmd_report, "print a loop report, or the registry's models")
    p.add_argument("path", nargs="?")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.fn(args)
    except VoxrankError as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
