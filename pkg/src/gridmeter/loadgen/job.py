from __future__ import annotations

import csv
import io
import logging
import os
import random
import time
from dataclasses import dataclass, field

from gridmeter.loadgen.loaders import load_cpu, load_memory, load_network
from gridmeter.loadgen.params import LoadParams
from gridmeter.loadgen.states import LoadState, TransitionTable, default_table, next_state

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["job_id", "expected_s", "observed_s", "bytes_sent", "bytes_allocated", "visit_sequence"]


@dataclass
class LoadReport:
    state_wall_s: dict = field(default_factory=lambda: {s: 0.0 for s in LoadState})
    bytes_sent: int = 0
    bytes_allocated: int = 0
    expected_total: float = 0.0
    observed_total: float = 0.0
    visit_sequence: list = field(default_factory=list)
    busy_slots: int = 0
    total_slots: int = 0
    error: str | None = None

    def csv_row(self, job_id: str) -> list:
        return [
            job_id,
            f"{self.expected_total:.3f}",
            f"{self.observed_total:.3f}",
            self.bytes_sent,
            self.bytes_allocated,
            ";".join(s.value for s in self.visit_sequence),
        ]


class JobFailed(Exception):
    """A loader failed; ``report`` holds everything up to the failure."""

    def __init__(self, cause: BaseException, report: LoadReport):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.cause = cause
        self.report = report


def run_job(params: LoadParams, table: TransitionTable | None = None, *, rng=None,
            connect_timeout: float = 5.0, max_steps: int = 1_000_000) -> LoadReport:
    """Drive the state machine from Init to Done, running each state's loader.

    Every visit to Network or Cpu runs the full commanded duration; memory
    is allocated on the first Memory visit and held until the job ends.
    """
    table = table or default_table()
    rng = rng or random.Random(params.rng_seed)
    report = LoadReport()
    state = LoadState.Init
    report.visit_sequence.append(state)
    handle = None
    t0 = time.perf_counter()
    try:
        for _ in range(max_steps):
            if state is LoadState.Done:
                break
            state = next_state(table, state, rng)
            report.visit_sequence.append(state)
            entered = time.perf_counter()
            if state is LoadState.Network:
                res = load_network(params.net_seconds, params.duty_p, params.sink_addr, rng,
                                   slot_ms=params.slot_ms, connect_timeout=connect_timeout)
                report.bytes_sent += res.bytes_sent
                report.expected_total += params.net_seconds
                report.busy_slots += res.busy_slots
                report.total_slots += res.total_slots
            elif state is LoadState.Memory:
                if handle is None:
                    handle = load_memory(params.mem_bytes)
                    report.bytes_allocated = handle.bytes_held
            elif state is LoadState.Cpu:
                res = load_cpu(params.cpu_seconds, params.duty_p, params.slot_ms, rng)
                report.expected_total += params.cpu_seconds
                report.busy_slots += res.busy_slots
                report.total_slots += res.total_slots
            report.state_wall_s[state] += time.perf_counter() - entered
        else:
            raise RuntimeError(f"no Done after {max_steps} transitions")
    except Exception as e:
        report.error = f"{type(e).__name__}: {e}"
        report.observed_total = time.perf_counter() - t0
        raise JobFailed(e, report) from e
    finally:
        if handle is not None:
            handle.release()
    report.observed_total = time.perf_counter() - t0
    return report


def append_report(path: str, job_id: str, report: LoadReport) -> None:
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if new:
        w.writerow(REPORT_COLUMNS)
    w.writerow(report.csv_row(job_id))
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(buf.getvalue())
