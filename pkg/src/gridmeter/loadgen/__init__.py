"""State-machine load generator: CPU, memory and network loading."""

from gridmeter.loadgen.job import JobFailed, LoadReport, run_job
from gridmeter.loadgen.loaders import (
    CpuReport, MemoryHandle, NetReport, duty_schedule, load_cpu, load_memory, load_network,
)
from gridmeter.loadgen.params import LoadParams, parse_config, parse_hostport, parse_size
from gridmeter.loadgen.pareto import pareto_cdf, pareto_mean, sample_pareto
from gridmeter.loadgen.sink import Sink, run_sink
from gridmeter.loadgen.states import (
    LoadState, TransitionTable, default_table, format_table, next_state, parse_table,
)

__all__ = [
    "CpuReport", "JobFailed", "LoadParams", "LoadReport", "LoadState", "MemoryHandle",
    "NetReport", "Sink", "TransitionTable", "default_table", "duty_schedule", "format_table",
    "load_cpu", "load_memory", "load_network", "next_state", "pareto_cdf", "pareto_mean",
    "parse_config", "parse_hostport", "parse_size", "parse_table", "run_job", "run_sink",
    "sample_pareto",
]
