"""Job-set generation and sequential master-slave submission of loadgen jobs.

Each job is one ``loadgen`` process launched with the marker token on its
command line. Submit, start and end times are recorded as whole seconds
(truncated), so observed durations carry up to one second of timer error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import random
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field

from gridmeter.errors import ConfigError, TransportError
from gridmeter.loadgen.params import LoadParams, format_config, parse_hostport, parse_size
from gridmeter.loadgen.pareto import sample_pareto
from gridmeter.loadgen.sink import Sink
from gridmeter.procmon.model import DEFAULT_MARKER
from gridmeter.wire import Metric, MetricPacket, Sender, TransportConfig

log = logging.getLogger("gridmeter.harness")

RECORD_COLUMNS = ["job_id", "mode", "submit_t", "start_t", "end_t", "expected_s", "observed_s", "status"]
JOBSET_COLUMNS = ["job_id", "net_seconds", "cpu_seconds", "mem_bytes", "duty_p", "expected_s"]
MARKER_COLUMNS = ["t", "event", "job_id", "ordinal"]


def _num(x: float) -> str:
    """Stable text for a duration: integers without a fraction, else 3 places."""
    return str(int(x)) if float(x).is_integer() else f"{x:.3f}"


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    params: LoadParams

    @property
    def expected_s(self) -> float:
        # Memory allocation is treated as instantaneous.
        return self.params.net_seconds + self.params.cpu_seconds


@dataclass(frozen=True)
class JobSet:
    jobs: tuple
    seed: int
    alpha: float
    xmin: float
    mem_range: tuple
    duty_p: float

    def __post_init__(self):
        ids = [j.job_id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise ConfigError("job ids must be unique")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} alpha={self.alpha!r} xmin={self.xmin!r} "
                  f"mem={self.mem_range[0]}..{self.mem_range[1]} duty={self.duty_p!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(JOBSET_COLUMNS)
        for j in self.jobs:
            p = j.params
            w.writerow([j.job_id, repr(p.net_seconds), repr(p.cpu_seconds), p.mem_bytes,
                        repr(p.duty_p), _num(j.expected_s)])
        return buf.getvalue()


def generate_job_set(count: int, alpha: float, xmin: float, mem_range=(0, 0), duty_p: float = 1.0,
                     seed: int = 0, *, max_expected: float | None = None,
                     resolution_s: float | None = None) -> JobSet:
    """Draw ``count`` jobs with independent Pareto network and CPU durations.

    ``resolution_s`` rounds each drawn duration to that granularity (at
    least one step), matching the recording resolution. ``max_expected``
    rejects and redraws jobs whose expected time exceeds the cap.
    """
    if count <= 0:
        raise ConfigError("job count must be positive")
    if alpha <= 0 or xmin <= 0:
        raise ConfigError("Pareto alpha and xmin must be positive")
    lo, hi = mem_range
    if lo < 0 or hi < lo:
        raise ConfigError(f"bad memory range {lo}..{hi}")
    if max_expected is not None and max_expected < 2 * xmin:
        raise ConfigError(f"max_expected {max_expected} is below the minimum job length {2 * xmin}")
    if resolution_s is not None and resolution_s <= 0:
        raise ConfigError("resolution_s must be positive")

    rng = random.Random(seed)

    def draw():
        x = sample_pareto(rng, alpha, xmin)
        if resolution_s:
            x = max(resolution_s, round(x / resolution_s) * resolution_s)
        return float(x)

    jobs = []
    width = max(3, len(str(count - 1)))
    for i in range(count):
        while True:
            net, cpu = draw(), draw()
            mem = rng.randint(lo, hi)
            if max_expected is None or net + cpu <= max_expected:
                break
        params = LoadParams(net_seconds=net, cpu_seconds=cpu, mem_bytes=mem, duty_p=duty_p,
                            pareto_alpha=alpha, pareto_xmin=xmin, rng_seed=(seed * 1_000_003 + i) % (1 << 64))
        jobs.append(JobSpec(f"job{i:0{width}d}", params))
    return JobSet(tuple(jobs), seed, alpha, xmin, (lo, hi), duty_p)


@dataclass(frozen=True)
class SubmissionMode:
    kind: str = "local"
    prefix_cmd: tuple = ()
    declared_overhead_s: float = 0.0

    def __post_init__(self):
        if self.kind not in ("local", "wrapped"):
            raise ConfigError(f"unknown submission mode {self.kind!r}")
        if self.kind == "local" and (self.prefix_cmd or self.declared_overhead_s):
            raise ConfigError("local mode has no prefix and no overhead")
        if self.declared_overhead_s < 0:
            raise ConfigError("declared overhead must be >= 0")

    @classmethod
    def local(cls) -> "SubmissionMode":
        return cls()

    @classmethod
    def wrapped(cls, overhead_s: float, prefix_cmd=None) -> "SubmissionMode":
        """Emulate a remote submission path with a fixed startup delay."""
        if prefix_cmd is None:
            prefix_cmd = ("sh", "-c", f'sleep {overhead_s:g}; exec "$@"', "wrapped")
        return cls("wrapped", tuple(prefix_cmd), overhead_s)


@dataclass
class JobRecord:
    job_id: str
    mode: str
    submit_t: int
    start_t: int
    end_t: int
    expected_s: float
    status: str = "ok"

    @property
    def observed_s(self) -> int:
        return self.end_t - self.start_t

    def row(self) -> list:
        return [self.job_id, self.mode, self.submit_t, self.start_t, self.end_t,
                _num(self.expected_s), self.observed_s, self.status]


def write_records(path: str, records, append: bool = False) -> None:
    new = not append or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_records(path_or_file) -> list[JobRecord]:
    fh = open(path_or_file, newline="", encoding="utf-8") if isinstance(path_or_file, str) else path_or_file
    try:
        out = []
        for row in csv.DictReader(fh):
            out.append(JobRecord(row["job_id"], row["mode"], int(row["submit_t"]), int(row["start_t"]),
                                 int(row["end_t"]), float(row["expected_s"]), row["status"]))
        return out
    finally:
        if isinstance(path_or_file, str):
            fh.close()


def percent_difference(expected_s: float, observed_s: float) -> float:
    if expected_s <= 0:
        raise ValueError(f"expected_s must be > 0, got {expected_s}")
    return (observed_s - expected_s) / expected_s * 100.0


def loadgen_command(config_path: str, job_id: str, marker: str = DEFAULT_MARKER) -> list[str]:
    return [sys.executable, "-m", "gridmeter.loadgen", "--config", config_path,
            "--tag", marker, "--job-id", job_id]


def run_master_slave(jobset: JobSet, mode: SubmissionMode, settle_s: float = 45.0, *,
                     sink_addr: str | None = None, marker: str = DEFAULT_MARKER,
                     on_record=None, workdir: str | None = None, clock=time.time) -> list[JobRecord]:
    """Run every job to completion in order, pausing ``settle_s`` between jobs.

    When no sink address is given and some job has a network phase, an
    in-process sink is started for the duration of the run. ``on_record``
    is called with each JobRecord as soon as it is complete.
    """
    if settle_s < 0:
        raise ConfigError("settle_s must be >= 0")
    own_sink = None
    if sink_addr is None and any(j.params.net_seconds > 0 for j in jobset.jobs):
        own_sink = Sink().start()
        sink_addr = own_sink.addr
    records = []
    try:
        with tempfile.TemporaryDirectory(dir=workdir, prefix="harness-") as tmp:
            for i, job in enumerate(jobset.jobs):
                rec = _run_one(job, mode, sink_addr, marker, tmp, clock)
                records.append(rec)
                log.info("%s %s: expected %ss observed %ss (%s)", job.job_id, mode.kind,
                         _num(rec.expected_s), rec.observed_s, rec.status)
                if on_record is not None:
                    on_record(rec)
                if i + 1 < len(jobset.jobs):
                    time.sleep(settle_s)
    finally:
        if own_sink is not None:
            own_sink.stop()
    return records


def _run_one(job: JobSpec, mode: SubmissionMode, sink_addr, marker, tmp, clock) -> JobRecord:
    submit_t = int(clock())
    params = job.params if sink_addr is None else job.params.replace(sink_addr=sink_addr)
    config = os.path.join(tmp, f"{job.job_id}.conf")
    with open(config, "w", encoding="utf-8") as fh:
        fh.write(format_config(params))
    cmd = list(mode.prefix_cmd) + loadgen_command(config, job.job_id, marker)
    try:
        proc = subprocess.Popen(cmd, stdin=subprocess.DEVNULL)
    except OSError as e:
        log.error("%s: submission failed: %s", job.job_id, e)
        t = int(clock())
        return JobRecord(job.job_id, mode.kind, submit_t, t, t, job.expected_s, "failed")
    start_t = int(clock())
    rc = proc.wait()
    end_t = int(clock())
    if rc != 0:
        log.error("%s exited with status %d", job.job_id, rc)
    return JobRecord(job.job_id, mode.kind, submit_t, start_t, end_t, job.expected_s,
                     "ok" if rc == 0 else "failed")


def emit_job_markers(records, transport: TransportConfig | None, csv_path: str | None = None, *,
                     host: str | None = None, first_ordinal: int = 0) -> int:
    """Publish job.start/job.end events; returns the number of markers.

    The CSV (columns t, event, job_id, ordinal) is appended first, so the
    markers survive even when the collector cannot be reached.
    """
    host = host or socket.gethostname()
    events = []
    for k, r in enumerate(records):
        ordinal = first_ordinal + k
        events.append((r.start_t, "job.start", r.job_id, ordinal))
        events.append((r.end_t, "job.end", r.job_id, ordinal))
    if csv_path:
        new = not os.path.exists(csv_path) or os.path.getsize(csv_path) == 0
        with open(csv_path, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(MARKER_COLUMNS)
            w.writerows(events)
    if transport is not None:
        try:
            with Sender(transport) as s:
                for t, event, job_id, ordinal in events:
                    s.send(MetricPacket(host, t, (Metric(event, ordinal, "", job_id),)))
        except (TransportError, OSError) as e:
            log.warning("marker emission failed: %s", e)
    return len(events)


def parse_mem_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    if not sep:
        raise ConfigError(f"expected lo..hi, got {text!r}")
    return parse_size(lo), parse_size(hi)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harness", description="Generate a job set and submit it sequentially.")
    p.add_argument("--jobs", type=int, default=10, help="number of jobs")
    p.add_argument("--alpha", type=float, default=3.0, help="Pareto shape")
    p.add_argument("--xmin", type=float, default=10.0, help="Pareto scale in seconds")
    p.add_argument("--mem", default="1M..16M", help="memory range lo..hi (K/M/G suffixes)")
    p.add_argument("--duty", type=float, default=1.0, help="duty-cycle probability for each job")
    p.add_argument("--seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--settle", type=float, default=45.0, help="seconds between a job ending and the next submission")
    p.add_argument("--mode", choices=["local", "wrapped"], default="local")
    p.add_argument("--wrap-overhead", type=float, default=3.0, help="startup delay injected in wrapped mode")
    p.add_argument("--records", default="records.csv", help="JobRecord CSV output")
    p.add_argument("--emit", metavar="ADDR:PORT", help="send job.start/job.end markers to a collector")
    p.add_argument("--markers", help="marker CSV (default: <records>.markers.csv when --emit is set)")
    p.add_argument("--sink", metavar="ADDR:PORT", help="network sink for jobs (default: start one in-process)")
    p.add_argument("--marker-tag", default=DEFAULT_MARKER, help="token put on each job's command line")
    p.add_argument("--max-expected", type=float, help="redraw jobs whose expected time exceeds this")
    p.add_argument("--resolution", type=float, default=1.0,
                   help="round drawn durations to this many seconds (0 disables)")
    p.add_argument("--save-jobs", help="write the generated job set to this CSV")
    p.add_argument("--dry-run", action="store_true", help="generate and print the job set only")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s harness %(levelname)s %(message)s")
    try:
        jobset = generate_job_set(args.jobs, args.alpha, args.xmin, parse_mem_range(args.mem), args.duty,
                                  args.seed, max_expected=args.max_expected,
                                  resolution_s=args.resolution or None)
        mode = (SubmissionMode.wrapped(args.wrap_overhead) if args.mode == "wrapped"
                else SubmissionMode.local())
        if args.sink:
            parse_hostport(args.sink)
        transport = TransportConfig("unicast", args.emit) if args.emit else None
    except ConfigError as e:
        print(f"harness: {e}", file=sys.stderr)
        return 2

    if args.save_jobs:
        with open(args.save_jobs, "w", encoding="utf-8") as fh:
            fh.write(jobset.to_csv())
    if args.dry_run:
        sys.stdout.write(jobset.to_csv())
        return 0

    markers = args.markers or (f"{args.records}.markers.csv" if args.emit else None)
    write_records(args.records, [])
    if markers and os.path.exists(markers):
        os.remove(markers)
    done = []

    def on_record(rec):
        write_records(args.records, [rec], append=True)
        if markers or transport:
            emit_job_markers([rec], transport, markers, first_ordinal=len(done))
        done.append(rec)

    records = run_master_slave(jobset, mode, args.settle, sink_addr=args.sink,
                               marker=args.marker_tag, on_record=on_record)
    ok = [r for r in records if r.status == "ok"]
    if ok:
        diffs = [percent_difference(r.expected_s, r.observed_s) for r in ok]
        print(f"jobs={len(records)} ok={len(ok)} mean_percent_difference={sum(diffs) / len(diffs):.3f} "
              f"max_percent_difference={max(diffs):.3f}")
    return 0 if len(ok) == len(records) else 1


if __name__ == "__main__":
    raise SystemExit(main())
