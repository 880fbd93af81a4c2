"""Receive-and-discard endpoint for network loading.

Accepts TCP streams and UDP datagrams on the same port number and counts
the bytes. Totals are printed on shutdown.
"""

from __future__ import annotations

import argparse
import logging
import signal
import socket
import threading

from gridmeter.errors import ConfigError, TransportError
from gridmeter.loadgen.params import parse_hostport

log = logging.getLogger(__name__)


class Sink:
    def __init__(self, listen: str = "127.0.0.1:0"):
        host, port = parse_hostport(listen)
        try:
            self._tcp = socket.create_server((host, port), reuse_port=False)
            port = self._tcp.getsockname()[1]
            self._udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._udp.bind((host, port))
        except OSError as e:
            raise TransportError(f"cannot bind sink on {listen}: {e}") from e
        self.address = (host, port)
        self._lock = threading.Lock()
        self._stream_bytes = 0
        self._datagram_bytes = 0
        self.connections = 0
        self._workers: list[threading.Thread] = []
        self._stopping = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def addr(self) -> str:
        return f"{self.address[0]}:{self.address[1]}"

    @property
    def total_bytes(self) -> int:
        with self._lock:
            return self._stream_bytes + self._datagram_bytes

    def _add(self, n: int, stream: bool) -> None:
        with self._lock:
            if stream:
                self._stream_bytes += n
            else:
                self._datagram_bytes += n

    def start(self) -> "Sink":
        for target in (self._accept_loop, self._datagram_loop):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def _accept_loop(self) -> None:
        self._tcp.settimeout(0.2)
        while not self._stopping.is_set():
            try:
                conn, _ = self._tcp.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with self._lock:
                self.connections += 1
            worker = threading.Thread(target=self._drain, args=(conn,), daemon=True)
            worker.start()
            self._workers.append(worker)

    def _drain(self, conn: socket.socket) -> None:
        conn.settimeout(0.5)
        with conn:
            while True:
                try:
                    chunk = conn.recv(65536)
                except socket.timeout:
                    if self._stopping.is_set():
                        break
                    continue
                except OSError:
                    break
                if not chunk:
                    break
                self._add(len(chunk), stream=True)

    def _datagram_loop(self) -> None:
        self._udp.settimeout(0.2)
        while not self._stopping.is_set():
            try:
                data = self._udp.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            self._add(len(data), stream=False)

    def stop(self, timeout: float = 5.0) -> int:
        """Stop accepting, let open streams drain to EOF, return the total."""
        for w in list(self._workers):
            w.join(timeout)
        self._stopping.set()
        for t in self._threads + self._workers:
            t.join(timeout)
        self._tcp.close()
        self._udp.close()
        return self.total_bytes

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def run_sink(listen: str, stop: threading.Event | None = None) -> int:
    stop = stop or threading.Event()
    sink = Sink(listen).start()
    log.info("sink listening on %s", sink.addr)
    while not stop.wait(0.5):
        pass
    total = sink.stop(timeout=1.0)
    log.info("sink stopped after %d connections", sink.connections)
    return total


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Count and discard load traffic.")
    parser.add_argument("--listen", default="127.0.0.1:8650", help="host:port to bind")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s sink %(message)s")

    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    try:
        total = run_sink(args.listen, stop)
    except (ConfigError, TransportError) as e:
        parser.exit(2, f"sink: {e}\n")
    print(f"total_bytes={total}", flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
