from __future__ import annotations

import enum
from dataclasses import dataclass, field

from gridmeter.errors import ConfigError

DEFAULT_MARKER = "gridjob"


@dataclass(frozen=True)
class ProcessSnapshot:
    pid: int
    ppid: int
    uid: int
    command: str
    cpu_ticks: int
    resident_bytes: int
    snapshot_time: float


@dataclass
class ProcessTable:
    """One consistent scan: processes keyed by pid plus system tick totals."""

    t: float
    processes: dict[int, ProcessSnapshot]
    busy_ticks: int
    idle_ticks: int
    ncpu: int = 1

    @classmethod
    def from_list(cls, t, snapshots, busy_ticks, idle_ticks, ncpu=1):
        procs = {}
        for s in snapshots:
            if s.pid in procs:
                raise ValueError(f"duplicate pid {s.pid} in one snapshot")
            procs[s.pid] = s
        return cls(t, procs, busy_ticks, idle_ticks, ncpu)


class GroupingPolicy(enum.Enum):
    AllManagedJobs = "all"
    PerUser = "user"
    PerApplication = "app"


@dataclass(frozen=True)
class GroupSample:
    """Window-averaged measurement for one group, or for the host.

    ``kind`` is ``group`` for attributed load, ``total`` for host busy
    percent and ``idle`` for host idle percent; the last two carry no
    memory figure.
    """

    group_id: str
    cpu_percent: float
    mem_bytes: int
    host: str
    t: int
    interval_s: float
    kind: str = "group"
    gaps: int = 0
    ticks_per_s: int = 100


@dataclass
class SamplerConfig:
    period_s: float = 1.0
    window_s: float = 15.0
    metrics: frozenset = field(default_factory=lambda: frozenset({"cpu", "mem"}))
    policy: GroupingPolicy = GroupingPolicy.AllManagedJobs
    marker: str = DEFAULT_MARKER

    def __post_init__(self):
        self.metrics = frozenset(self.metrics)
        if self.period_s <= 0 or self.window_s <= 0:
            raise ConfigError("period and window must be positive")
        ratio = self.window_s / self.period_s
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("window_s must be a positive integer multiple of period_s")
        unknown = self.metrics - {"cpu", "mem"}
        if unknown or not self.metrics:
            raise ConfigError(f"metrics must be a non-empty subset of cpu,mem (got {sorted(self.metrics)})")

    @property
    def periods_per_window(self) -> int:
        return round(self.window_s / self.period_s)
