"""CPU, memory and network loaders.

Each loader splits its duration into fixed slots and, per slot, is active
with probability ``duty_p``. The per-slot decisions are drawn up front from
the caller's RNG, so a seed fixes the load pattern regardless of timing.
"""

from __future__ import annotations

import logging
import math
import mmap
import socket
import time
from dataclasses import dataclass, field

from gridmeter.errors import ResourceError, TransportError
from gridmeter.loadgen.params import parse_hostport

log = logging.getLogger(__name__)

PAYLOAD_SIZE = 8 * 1024
_PAYLOAD = bytes(range(256)) * (PAYLOAD_SIZE // 256)
PAGE_SIZE = mmap.PAGESIZE


def slot_count(duration: float, slot_ms: int) -> int:
    if duration <= 0:
        return 0
    # tolerate float noise so that 10 s / 100 ms is exactly 100 slots
    return math.ceil(duration * 1000.0 / slot_ms - 1e-9)


def duty_schedule(n_slots: int, duty_p: float, rng) -> list[bool]:
    return [rng.random() < duty_p for _ in range(n_slots)]


@dataclass
class CpuReport:
    wall_s: float
    busy_slots: int
    total_slots: int
    schedule: list[bool] = field(default_factory=list, repr=False)


def load_cpu(duration, duty_p, slot_ms, rng, *, clock=time.perf_counter, sleep=time.sleep):
    """Spin or sleep slot by slot for ``duration`` seconds of wall time."""
    schedule = duty_schedule(slot_count(duration, slot_ms), duty_p, rng)
    if not schedule:
        return CpuReport(0.0, 0, 0)
    start = clock()
    end = start + duration
    slot = slot_ms / 1000.0
    for i, busy in enumerate(schedule):
        deadline = min(start + (i + 1) * slot, end)
        if busy:
            x = 1
            while clock() < deadline:
                x = (x * 1103515245 + 12345) & 0x7FFFFFFF
        else:
            remaining = deadline - clock()
            if remaining > 0:
                sleep(remaining)
    return CpuReport(clock() - start, sum(schedule), len(schedule), schedule)


class MemoryHandle:
    """Resident allocation; released by ``release()`` or garbage collection."""

    def __init__(self, nbytes: int):
        self._buf = None
        if nbytes > 0:
            try:
                buf = bytearray(nbytes)
                # dirty one byte per page so the pages become resident
                buf[::PAGE_SIZE] = b"\x01" * len(range(0, nbytes, PAGE_SIZE))
            except (MemoryError, OverflowError):
                raise ResourceError(f"cannot allocate {nbytes} bytes") from None
            self._buf = buf
        self.bytes_held = nbytes

    def release(self) -> None:
        self._buf = None
        self.bytes_held = 0

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.release()


def load_memory(nbytes: int) -> MemoryHandle:
    if nbytes < 0:
        raise ValueError("bytes must be >= 0")
    return MemoryHandle(nbytes)


@dataclass
class NetReport:
    bytes_sent: int
    wall_s: float
    busy_slots: int = 0
    total_slots: int = 0


def load_network(duration, duty_p, sink, rng, *, slot_ms=100, connect_timeout=5.0):
    """Stream 8 KiB payloads to ``sink`` (host:port) during active slots."""
    schedule = duty_schedule(slot_count(duration, slot_ms), duty_p, rng)
    if not schedule:
        return NetReport(0, 0.0)
    host, port = parse_hostport(sink)
    try:
        conn = socket.create_connection((host, port), timeout=connect_timeout)
    except OSError as e:
        raise TransportError(f"cannot reach sink {sink}: {e}") from e

    sent = 0
    start = time.perf_counter()
    end = start + duration
    slot = slot_ms / 1000.0
    try:
        with conn:
            for i, busy in enumerate(schedule):
                deadline = min(start + (i + 1) * slot, end)
                if busy:
                    while True:
                        remaining = deadline - time.perf_counter()
                        if remaining <= 0:
                            break
                        conn.settimeout(max(remaining, 0.001))
                        try:
                            sent += conn.send(_PAYLOAD)
                        except socket.timeout:
                            break
                else:
                    remaining = deadline - time.perf_counter()
                    if remaining > 0:
                        time.sleep(remaining)
            conn.settimeout(connect_timeout)
            conn.shutdown(socket.SHUT_WR)
            # wait for the sink to close its side so every byte is counted
            while conn.recv(4096):
                pass
    except OSError as e:
        raise TransportError(f"stream to {sink} failed after {sent} bytes: {e}") from e
    return NetReport(sent, time.perf_counter() - start, sum(schedule), len(schedule))
