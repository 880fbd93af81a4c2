"""Process table providers.

``OSProcessTable`` parses /proc on Linux; ``ScriptedProvider`` replays a CSV
timeline so the sampling arithmetic can be checked exactly.

Scripted timeline rows::

    t,pid,ppid,uid,command,cpu_ticks,resident_bytes
    t,TOTAL,busy_ticks,idle_ticks
    t,FAIL                         # provider failure at this step
"""

from __future__ import annotations

import csv
import io
import os
import time
from collections import defaultdict

from gridmeter.errors import ConfigError, SamplingError
from gridmeter.procmon.model import ProcessSnapshot, ProcessTable

PAGE_SIZE = os.sysconf("SC_PAGE_SIZE") if hasattr(os, "sysconf") else 4096


def ticks_per_second() -> int:
    try:
        return os.sysconf("SC_CLK_TCK")
    except (ValueError, OSError, AttributeError):
        return 100


def read_proc_stat(pid: int, proc_root: str = "/proc", t: float | None = None) -> ProcessSnapshot:
    base = f"{proc_root}/{pid}"
    with open(f"{base}/stat", "rb") as fh:
        raw = fh.read().decode("utf-8", "replace")
    # comm is parenthesised and may itself contain spaces or ')'
    lpar, rpar = raw.index("("), raw.rindex(")")
    comm = raw[lpar + 1:rpar]
    fields = raw[rpar + 2:].split()
    # fields[0] is field 3 (state) of proc(5)
    ppid = int(fields[1])
    utime, stime = int(fields[11]), int(fields[12])
    rss_pages = int(fields[21])
    try:
        with open(f"{base}/cmdline", "rb") as fh:
            argv = fh.read().rstrip(b"\0").split(b"\0")
        command = " ".join(a.decode("utf-8", "replace") for a in argv if a) or f"[{comm}]"
    except OSError:
        command = f"[{comm}]"
    uid = os.stat(base).st_uid
    return ProcessSnapshot(pid, ppid, uid, command, utime + stime,
                           rss_pages * PAGE_SIZE, time.time() if t is None else t)


def read_system_ticks(proc_root: str = "/proc") -> tuple[int, int]:
    """Return cumulative (busy, idle) jiffies across all CPUs."""
    with open(f"{proc_root}/stat") as fh:
        first = fh.readline().split()
    vals = [int(v) for v in first[1:]]
    vals += [0] * (8 - len(vals))
    user, nice, system, idle, iowait, irq, softirq, steal = vals[:8]
    # guest time is already folded into user/nice
    return user + nice + system + irq + softirq + steal, idle + iowait


class OSProcessTable:
    self_paced = False

    def __init__(self, proc_root: str = "/proc"):
        self.proc_root = proc_root
        self.ticks_per_s = ticks_per_second()
        self.ncpu = os.cpu_count() or 1
        if not os.path.isdir(f"{proc_root}/self"):
            raise ConfigError(f"{proc_root} is not a procfs mount")

    def snapshot(self) -> ProcessTable:
        try:
            t = time.time()
            busy, idle = read_system_ticks(self.proc_root)
            names = os.listdir(self.proc_root)
        except OSError as e:
            raise SamplingError(f"cannot read {self.proc_root}: {e}") from e
        procs = {}
        for name in names:
            if not name.isdigit():
                continue
            try:
                snap = read_proc_stat(int(name), self.proc_root, t)
            except (OSError, ValueError, IndexError):
                continue  # exited mid-scan
            procs[snap.pid] = snap
        return ProcessTable(t, procs, busy, idle, self.ncpu)


class ProviderExhausted(Exception):
    """A scripted timeline has no more steps."""


class ScriptedProvider:
    """Replays a declared timeline, one timestamp per ``snapshot()`` call.

    With ``realtime`` the replay waits until each step's offset from the
    first step has elapsed; otherwise steps are returned immediately and the
    sampler does not sleep between them.
    """

    def __init__(self, steps, *, ticks_per_s: int = 100, ncpu: int = 1, realtime: bool = False):
        self.steps = list(steps)
        self.ticks_per_s = ticks_per_s
        self.ncpu = ncpu
        self.realtime = realtime
        self.self_paced = True
        self._i = 0
        self._t0 = None

    @classmethod
    def from_csv(cls, text: str, **kwargs) -> "ScriptedProvider":
        procs = defaultdict(list)
        totals = {}
        failures = set()
        for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
            if not row or row[0].lstrip().startswith("#") or row[0] == "t":
                continue
            try:
                t = float(row[0])
                if row[1] == "TOTAL":
                    totals[t] = (int(row[2]), int(row[3]))
                elif row[1] == "FAIL":
                    failures.add(t)
                else:
                    pid, ppid, uid = int(row[1]), int(row[2]), int(row[3])
                    procs[t].append((pid, ppid, uid, row[4], int(row[5]), int(row[6])))
            except (IndexError, ValueError):
                raise ConfigError(f"scripted timeline line {lineno}: bad row {row!r}") from None
        steps = []
        for t in sorted(set(procs) | set(totals) | failures):
            if t in failures:
                steps.append((t, None))
                continue
            if t not in totals:
                raise ConfigError(f"scripted timeline: no TOTAL row at t={t:g}")
            steps.append((t, (procs.get(t, []), totals[t])))
        return cls(steps, **kwargs)

    def __len__(self):
        return len(self.steps)

    @property
    def remaining(self) -> int:
        return len(self.steps) - self._i

    def snapshot(self) -> ProcessTable:
        if self._i >= len(self.steps):
            raise ProviderExhausted
        t, body = self.steps[self._i]
        self._i += 1
        if self.realtime:
            if self._t0 is None:
                self._t0 = (time.monotonic(), t)
            wait = self._t0[0] + (t - self._t0[1]) - time.monotonic()
            if wait > 0:
                time.sleep(wait)
        if body is None:
            raise SamplingError(f"scripted failure at t={t:g}")
        rows, (busy, idle) = body
        snaps = [ProcessSnapshot(pid, ppid, uid, cmd, ticks, rss, t)
                 for pid, ppid, uid, cmd, ticks, rss in rows]
        return ProcessTable.from_list(t, snaps, busy, idle, self.ncpu)


def timeline_to_csv(steps) -> str:
    """Inverse of ``ScriptedProvider.from_csv`` for in-memory step lists."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "pid", "ppid", "uid", "command", "cpu_ticks", "resident_bytes"])
    for t, body in steps:
        if body is None:
            w.writerow([t, "FAIL"])
            continue
        rows, (busy, idle) = body
        w.writerow([t, "TOTAL", busy, idle])
        for row in rows:
            w.writerow([t, *row])
    return buf.getvalue()
