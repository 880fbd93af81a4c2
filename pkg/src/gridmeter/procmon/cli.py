"""``monitord``: per-process attribution daemon."""

from __future__ import annotations

import argparse
import logging
import queue
import signal
import sys
import threading
from collections import defaultdict

from gridmeter.errors import ConfigError, TransportError
from gridmeter.procmon.model import DEFAULT_MARKER, GroupingPolicy, SamplerConfig
from gridmeter.procmon.providers import OSProcessTable, ScriptedProvider
from gridmeter.procmon.sampler import measure_self_footprint, run_sampler
from gridmeter.wire import Metric, MetricPacket, Sender, TransportConfig

log = logging.getLogger("gridmeter.monitord")


def samples_to_packets(samples) -> list[MetricPacket]:
    """Pack GroupSamples into one MetricPacket per (host, t)."""
    by_key = defaultdict(list)
    for s in samples:
        by_key[(s.host, s.t)].append(s)
    packets = []
    for (host, t), batch in sorted(by_key.items()):
        metrics = []
        for s in batch:
            gaps = s.gaps or None
            if s.kind == "total":
                metrics.append(Metric("cpu_total", s.cpu_percent, "%", None, gaps))
            elif s.kind == "idle":
                metrics.append(Metric("cpu_idle", s.cpu_percent, "%", None, gaps))
            else:
                metrics.append(Metric("cpu_attributed", s.cpu_percent, "%", s.group_id, gaps))
                metrics.append(Metric("mem_attributed", s.mem_bytes, "B", s.group_id, gaps))
        metrics.append(Metric("ticks_per_s", batch[0].ticks_per_s, "Hz"))
        packets.append(MetricPacket(host, t, tuple(metrics)))
    return packets


class QueuedEmitter:
    """Hands samples to a sender thread so sampling never waits on the network."""

    def __init__(self, sender: Sender):
        self.sender = sender
        self.queue: queue.Queue = queue.Queue()
        self.sent = 0
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def __call__(self, sample) -> None:
        self.queue.put(sample)

    def _run(self) -> None:
        while True:
            item = self.queue.get()
            if item is None:
                return
            batch = [item]
            # samples of one window arrive together; pack them into one packet
            while True:
                try:
                    nxt = self.queue.get(timeout=0.05)
                except queue.Empty:
                    break
                if nxt is None:
                    self._send(batch)
                    return
                batch.append(nxt)
            self._send(batch)

    def _send(self, batch) -> None:
        for packet in samples_to_packets(batch):
            try:
                self.sent += self.sender.send(packet)
            except TransportError as e:
                log.warning("emit failed: %s", e)

    def close(self, timeout: float = 5.0) -> None:
        self.queue.put(None)
        self._thread.join(timeout)


def make_provider(spec: str):
    if spec == "os":
        return OSProcessTable()
    kind, _, path = spec.partition(":")
    if kind == "scripted" and path:
        with open(path, encoding="utf-8") as fh:
            return ScriptedProvider.from_csv(fh.read())
    if kind == "scripted-realtime" and path:
        with open(path, encoding="utf-8") as fh:
            return ScriptedProvider.from_csv(fh.read(), realtime=True)
    raise ConfigError(f"unknown provider {spec!r} (os | scripted:<path>)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monitord", description="Attribute CPU and memory to managed jobs.")
    p.add_argument("--period", type=float, default=1.0, help="sampling period in seconds")
    p.add_argument("--window", type=float, default=15.0, help="averaging window in seconds")
    p.add_argument("--policy", choices=[g.value for g in GroupingPolicy], default="all")
    p.add_argument("--marker", default=DEFAULT_MARKER, help="command-line token identifying managed jobs")
    p.add_argument("--metrics", default="cpu,mem", help="comma-separated subset of cpu,mem")
    p.add_argument("--emit", default="127.0.0.1:8649", help="collector host:port (or group:port)")
    p.add_argument("--mode", choices=["unicast", "multicast"], default="unicast")
    p.add_argument("--provider", default="os", help="os | scripted:<csv path>")
    p.add_argument("--host", help="host name to report (default: this machine's)")
    p.add_argument("--footprint", type=float, metavar="SECONDS",
                   help="measure own CPU use over this many seconds, print it and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s monitord %(levelname)s %(message)s")
    try:
        config = SamplerConfig(args.period, args.window,
                               frozenset(m.strip() for m in args.metrics.split(",") if m.strip()),
                               GroupingPolicy(args.policy), args.marker)
        provider = make_provider(args.provider)
        sender = Sender(TransportConfig(args.mode, args.emit))
    except (OSError, ConfigError, TransportError) as e:
        print(f"monitord: {e}", file=sys.stderr)
        return 2

    emitter = QueuedEmitter(sender)
    if args.footprint:
        pct = measure_self_footprint(provider, config, args.footprint, emitter)
        emitter.close()
        print(f"footprint_percent={pct:.4f}", flush=True)
        return 0

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    log.info("sampling every %gs, %gs windows, policy %s, marker %r -> %s",
             config.period_s, config.window_s, config.policy.value, config.marker, args.emit)
    run_sampler(config, provider, emitter, stop=stop, host=args.host)
    emitter.close()
    log.info("stopped after %d datagrams", emitter.sent)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
