"""CPU attribution from cumulative tick counters.

Percentages are computed from the difference of two tick readings, so a
process that has been busy for the whole interval reads 100% immediately,
with no smoothing carried over from earlier intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

from gridmeter.errors import OrderingError
from gridmeter.procmon.model import ProcessTable


@dataclass
class CpuPercentages:
    dt: float
    per_pid: dict[int, float]
    per_group: dict[str, float]
    mem_per_group: dict[str, int]
    total_busy: float
    idle: float


def pid_tick_delta(prev: ProcessTable, curr: ProcessTable, pid: int) -> int:
    now = curr.processes[pid].cpu_ticks
    before = prev.processes.get(pid)
    if before is None or now < before.cpu_ticks:
        # new process, or the pid was reused: everything it has is new
        return now
    return now - before.cpu_ticks


def compute_cpu_percent(prev: ProcessTable, curr: ProcessTable, ticks_per_s: int,
                        groups: dict[str, set[int]] | None = None) -> CpuPercentages:
    dt = curr.t - prev.t
    if dt <= 0:
        raise OrderingError(f"snapshots out of order: dt={dt}")
    scale = 100.0 / (ticks_per_s * dt)
    per_pid = {pid: pid_tick_delta(prev, curr, pid) * scale for pid in curr.processes}

    groups = groups or {}
    per_group = {}
    mem = {}
    for gid, pids in groups.items():
        live = [p for p in pids if p in curr.processes]
        per_group[gid] = sum(per_pid[p] for p in live)
        mem[gid] = sum(curr.processes[p].resident_bytes for p in live)

    d_busy = curr.busy_ticks - prev.busy_ticks
    d_idle = curr.idle_ticks - prev.idle_ticks
    d_all = d_busy + d_idle
    full = 100.0 * curr.ncpu
    if d_all > 0:
        busy = full * d_busy / d_all
        idle = full - busy
    else:
        busy, idle = 0.0, full
    return CpuPercentages(dt, per_pid, per_group, mem, busy, idle)
