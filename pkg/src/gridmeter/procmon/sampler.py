from __future__ import annotations

import logging
import math
import socket
import threading
import time

from gridmeter.errors import OrderingError, SamplingError
from gridmeter.procmon.cpu import compute_cpu_percent
from gridmeter.procmon.grouping import ALL_GROUP, build_process_groups
from gridmeter.procmon.model import GroupingPolicy, GroupSample, SamplerConfig
from gridmeter.procmon.providers import ProviderExhausted

log = logging.getLogger(__name__)


def scan_process_table(provider):
    """Take one snapshot; provider failures surface as SamplingError."""
    try:
        return provider.snapshot()
    except (SamplingError, ProviderExhausted):
        raise
    except Exception as e:
        raise SamplingError(f"provider failed: {e}") from e


class Sampler:
    """Turns successive process-table snapshots into window averages.

    Windows are tumbling and aligned to multiples of ``window_s``; a
    per-period value computed at time t belongs to the window
    ``(k*window_s, (k+1)*window_s]`` containing t and is labelled with the
    window's end. A window that began before the first snapshot is never
    emitted.
    """

    def __init__(self, config: SamplerConfig, ticks_per_s: int, host: str | None = None):
        self.config = config
        self.ticks_per_s = ticks_per_s
        self.host = host or socket.gethostname()
        self.sticky: dict[int, str] = {}
        self.prev = None
        self.started_at = None
        self._pending_failures = 0
        self._window = None

    def _quantise(self, t: float) -> float:
        p = self.config.period_s
        return round(t / p) * p

    def _window_index(self, t: float) -> int:
        return math.ceil(t / self.config.window_s - 1e-9) - 1

    def feed_failure(self) -> None:
        self._pending_failures += 1

    def feed(self, table) -> list[GroupSample]:
        groups = build_process_groups(table.processes, self.config.policy, self.config.marker,
                                      self.sticky)
        if self.config.policy is GroupingPolicy.AllManagedJobs:
            groups.setdefault(ALL_GROUP, set())
        prev, self.prev = self.prev, table
        if prev is None:
            self.started_at = self._quantise(table.t)
            self._pending_failures = 0
            return []
        pct = compute_cpu_percent(prev, table, self.ticks_per_s, groups)
        missed = round(pct.dt / self.config.period_s) - 1
        gaps = max(self._pending_failures, missed, 0)
        self._pending_failures = 0

        t = self._quantise(table.t)
        idx = self._window_index(t)
        out = []
        if self._window is not None and self._window["index"] != idx:
            out += self._close()
        if self._window is None:
            self._window = {"index": idx, "n": 0, "cpu": {}, "mem": {}, "busy": 0.0,
                            "idle": 0.0, "gaps": 0}
        w = self._window
        w["n"] += 1
        w["gaps"] += gaps
        w["busy"] += pct.total_busy
        w["idle"] += pct.idle
        for gid in set(w["cpu"]) | set(pct.per_group):
            w["cpu"][gid] = w["cpu"].get(gid, 0.0) + pct.per_group.get(gid, 0.0)
            w["mem"][gid] = w["mem"].get(gid, 0) + pct.mem_per_group.get(gid, 0)
        if abs(t - (idx + 1) * self.config.window_s) < 1e-9:
            out += self._close()
        return out

    def _close(self) -> list[GroupSample]:
        w, self._window = self._window, None
        start = w["index"] * self.config.window_s
        if self.started_at is None or start < self.started_at - 1e-9:
            return []
        end = (w["index"] + 1) * self.config.window_s
        n = w["n"]
        common = dict(host=self.host, t=int(round(end)), interval_s=self.config.window_s,
                      gaps=w["gaps"], ticks_per_s=self.ticks_per_s)
        samples = []
        for gid in sorted(w["cpu"]):
            cpu = w["cpu"][gid] / n if "cpu" in self.config.metrics else 0.0
            mem = round(w["mem"][gid] / n) if "mem" in self.config.metrics else 0
            samples.append(GroupSample(gid, cpu, mem, kind="group", **common))
        samples.append(GroupSample("", w["busy"] / n, 0, kind="total", **common))
        samples.append(GroupSample("", w["idle"] / n, 0, kind="idle", **common))
        return samples


def _sleep_to_next_period(period_s: float, stop: threading.Event) -> bool:
    # wake just after a period boundary so whole-second timestamps are stable
    now = time.time()
    target = (math.floor(now / period_s) + 1) * period_s + 0.01
    return not stop.wait(max(0.0, target - now))


def run_sampler(config: SamplerConfig, provider, emitter, *, stop: threading.Event | None = None,
                host: str | None = None, max_cycles: int | None = None) -> Sampler:
    """Poll ``provider`` every period and hand each GroupSample to ``emitter``.

    Runs until ``stop`` is set, ``max_cycles`` snapshots have been attempted,
    or a scripted provider runs out of steps.
    """
    stop = stop or threading.Event()
    sampler = Sampler(config, provider.ticks_per_s, host)
    cycles = 0
    paced = getattr(provider, "self_paced", False)
    while not stop.is_set() and (max_cycles is None or cycles < max_cycles):
        if not paced and cycles and not _sleep_to_next_period(config.period_s, stop):
            break
        cycles += 1
        try:
            table = scan_process_table(provider)
        except ProviderExhausted:
            break
        except SamplingError as e:
            log.warning("sample skipped: %s", e)
            sampler.feed_failure()
            continue
        try:
            samples = sampler.feed(table)
        except OrderingError as e:
            log.warning("sample dropped: %s", e)
            continue
        for sample in samples:
            emitter(sample)
    return sampler


def measure_self_footprint(provider, config: SamplerConfig | None = None, window_s: float = 60.0,
                           emitter=None) -> float:
    """CPU spent by this process while sampling, as % of one CPU.

    Runs the sampler for ``window_s`` of nominal time (``window_s/period_s``
    cycles). A scripted provider replays instantly, but the percentage is
    still taken over the nominal window, so it reflects only the work of
    parsing, grouping and averaging.
    """
    config = config or SamplerConfig()
    cycles = round(window_s / config.period_s) + 1
    wall0 = time.monotonic()
    cpu0 = time.process_time()
    run_sampler(config, provider, emitter or (lambda s: None), max_cycles=cycles)
    used = time.process_time() - cpu0
    if getattr(provider, "self_paced", False) and not getattr(provider, "realtime", False):
        span = window_s
    else:
        span = max(time.monotonic() - wall0, 1e-9)
    return 100.0 * used / span
