"""``collectord``: receive metric packets, keep them in round-robin stores,
and periodically export the fine-resolution data to CSV."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import signal
import sys
import threading
import time

from gridmeter.errors import ConfigError, ExportError, StaleError, TransportError
from gridmeter.rrdb.db import DEFAULT_LAYERS, EXPORT_COLUMNS, RoundRobinDb, parse_layers
from gridmeter.wire import Receiver, TransportConfig

log = logging.getLogger("gridmeter.collectord")

EXPORT_FILE = "metrics.csv"


class Collector:
    """One RoundRobinDb per (host, metric, group) series."""

    def __init__(self, specs=None):
        self.specs = list(specs or DEFAULT_LAYERS)
        self.dbs: dict[tuple, RoundRobinDb] = {}
        self.stale = 0
        self.lost_intervals: list[tuple] = []
        self._lock = threading.Lock()

    def ingest(self, packet) -> None:
        for m in packet.metrics:
            key = (packet.host, m.name, m.group or "")
            with self._lock:
                db = self.dbs.get(key)
                if db is None:
                    db = self.dbs[key] = RoundRobinDb(self.specs, key)
            try:
                db.insert(packet.t, m.value)
            except StaleError:
                self.stale += 1

    def export(self, path: str, t_to: float | None = None) -> int:
        """Append unexported fine-layer data for every series to ``path``."""
        t_to = time.time() if t_to is None else t_to
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        written = 0
        with open(path, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(EXPORT_COLUMNS)
            with self._lock:
                dbs = sorted(self.dbs.items())
            for key, db in dbs:
                res = db.export_high_frequency(0, t_to, w)
                written += res.records
                if res.lost:
                    log.warning("series %s: %s..%s wrapped before export", key, *res.lost)
                    self.lost_intervals.append((key, res.lost))
            fh.flush()
            os.fsync(fh.fileno())
        return written


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collectord", description="Collect metric packets into round-robin stores.")
    p.add_argument("--listen", default="127.0.0.1:8649", help="addr:port (group:port in multicast mode)")
    p.add_argument("--mode", choices=["unicast", "multicast"], default="unicast")
    p.add_argument("--layers", default="1x900,15x960,300x1152", help="resolution x slots, fine to coarse")
    p.add_argument("--export-dir", help="directory for the high-frequency CSV export")
    p.add_argument("--export-every", type=float, default=60.0, help="seconds between exports")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s collectord %(levelname)s %(message)s")
    try:
        collector = Collector(parse_layers(args.layers))
        RoundRobinDb(collector.specs)  # validate before binding
        receiver = Receiver(TransportConfig(args.mode, args.listen))
    except (ConfigError, TransportError) as e:
        print(f"collectord: {e}", file=sys.stderr)
        return 2

    export_path = None
    if args.export_dir:
        os.makedirs(args.export_dir, exist_ok=True)
        export_path = os.path.join(args.export_dir, EXPORT_FILE)

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())

    def exporter():
        while not stop.wait(args.export_every):
            try:
                collector.export(export_path)
            except (OSError, ExportError) as e:
                log.error("export failed: %s", e)

    if export_path:
        threading.Thread(target=exporter, daemon=True).start()
    log.info("listening on %s (%s)", args.listen, args.mode)
    receiver.recv_loop(collector.ingest, stop)
    receiver.close()
    if export_path:
        n = collector.export(export_path)
        log.info("final export: %d records", n)
    log.info("received %d packets, dropped %d, stale %d",
             receiver.received, receiver.dropped, collector.stale)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
