import json
import threading

from voxrank.catalog import save_catalog
from voxrank.config import SystemConfig, build_system
from voxrank.query import save_lexicon
from voxrank.server import make_http_server


def write_world(world, root, **overrides):
    root.mkdir(parents=True, exist_ok=True)
    save_catalog(world.catalog, root / "catalog.jsonl")
    save_lexicon(world.lexicon, root / "lexicon.json")
    cfg = {
        "catalog_path": "catalog.jsonl", "lexicon_path": "lexicon.json", "registry_dir": "registry",
        "event_log_path": "events.jsonl", "store_snapshot_path": "store.jsonl", "listen_addr": "127.0.0.1:0",
        "poll_interval_s": 0.2, **overrides,
    }
    (root / "config.json").write_text(json.dumps(cfg))
    return SystemConfig.from_file(root / "config.json")


class RunningServer:
    """An HTTP server on an ephemeral port, serving in a background thread."""

    def __init__(self, service):
        self.httpd = make_http_server(service, "127.0.0.1", 0)
        self.port = self.httpd.server_address[1]
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def start_system(world, root, **overrides):
    return build_system(write_world(world, root, **overrides), fsync=False)
