"""Per-process CPU and memory attribution from cumulative tick counters."""

from gridmeter.procmon.cpu import CpuPercentages, compute_cpu_percent
from gridmeter.procmon.grouping import ALL_GROUP, application_name, build_process_groups, is_marked
from gridmeter.procmon.model import (
    DEFAULT_MARKER, GroupingPolicy, GroupSample, ProcessSnapshot, ProcessTable, SamplerConfig,
)
from gridmeter.procmon.providers import (
    OSProcessTable, ProviderExhausted, ScriptedProvider, read_proc_stat, ticks_per_second,
    timeline_to_csv,
)
from gridmeter.procmon.sampler import Sampler, measure_self_footprint, run_sampler, scan_process_table

__all__ = [
    "ALL_GROUP", "CpuPercentages", "DEFAULT_MARKER", "GroupSample", "GroupingPolicy",
    "OSProcessTable", "ProcessSnapshot", "ProcessTable", "ProviderExhausted", "Sampler",
    "SamplerConfig", "ScriptedProvider", "application_name", "build_process_groups",
    "compute_cpu_percent", "is_marked", "measure_self_footprint", "read_proc_stat",
    "run_sampler", "scan_process_table", "ticks_per_second", "timeline_to_csv",
]
