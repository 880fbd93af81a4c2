import csv
import math
import socket
import threading
import time

import pytest

from gridmeter.errors import ConfigError
from gridmeter.harness import (
    JobRecord,
    JobSet,
    JobSpec,
    SubmissionMode,
    emit_job_markers,
    generate_job_set,
    main,
    percent_difference,
    read_records,
    run_master_slave,
    write_records,
)
from gridmeter.loadgen.params import LoadParams
from gridmeter.wire import Receiver, TransportConfig


def cpu_jobs(*seconds):
    return JobSet(tuple(JobSpec(f"job{i:03d}", LoadParams(cpu_seconds=s)) for i, s in enumerate(seconds)),
                  0, 3.0, 1.0, (0, 0), 1.0)


def free_udp_port():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def test_job_set_deterministic():
    a = generate_job_set(50, 3.0, 10.0, (1 << 20, 16 << 20), 0.8, seed=42)
    b = generate_job_set(50, 3.0, 10.0, (1 << 20, 16 << 20), 0.8, seed=42)
    assert a == b
    assert a.to_csv() == b.to_csv()
    assert a.to_csv() != generate_job_set(50, 3.0, 10.0, (1 << 20, 16 << 20), 0.8, seed=43).to_csv()
    assert len({j.job_id for j in a.jobs}) == 50
    assert all(1 << 20 <= j.params.mem_bytes <= 16 << 20 for j in a.jobs)
    assert all(j.params.duty_p == 0.8 for j in a.jobs)


@pytest.mark.parametrize("resolution", [None, 1.0])
def test_job_set_mean_expected(resolution):
    # Two independent Pareto(3, 10) draws: each has mean 3*10/2 = 15.
    js = generate_job_set(10_000, 3.0, 10.0, seed=7, resolution_s=resolution)
    mean = math.fsum(j.expected_s for j in js.jobs) / len(js.jobs)
    assert mean == pytest.approx(30.0, rel=0.02)
    assert all(j.expected_s >= 20 for j in js.jobs)


def test_job_set_quantised_and_capped():
    js = generate_job_set(200, 3.0, 10.0, seed=3, max_expected=40, resolution_s=1)
    for j in js.jobs:
        assert j.params.net_seconds.is_integer() and j.params.cpu_seconds.is_integer()
        assert 20 <= j.expected_s <= 40


@pytest.mark.parametrize("kwargs", [
    dict(count=0, alpha=3, xmin=10),
    dict(count=5, alpha=0, xmin=10),
    dict(count=5, alpha=3, xmin=-1),
    dict(count=5, alpha=3, xmin=10, mem_range=(10, 5)),
    dict(count=5, alpha=3, xmin=10, max_expected=15),
    dict(count=5, alpha=3, xmin=10, duty_p=1.5),
])
def test_job_set_invalid(kwargs):
    with pytest.raises(ConfigError):
        generate_job_set(**kwargs)


def test_duplicate_ids_rejected():
    spec = JobSpec("a", LoadParams(cpu_seconds=1))
    with pytest.raises(ConfigError):
        JobSet((spec, spec), 0, 3, 1, (0, 0), 1)


@pytest.mark.parametrize("expected,observed,pct", [(100, 102, 2.0), (100, 100, 0.0), (200, 223, 11.5)])
def test_percent_difference(expected, observed, pct):
    assert percent_difference(expected, observed) == pytest.approx(pct)


def test_percent_difference_rejects_nonpositive():
    with pytest.raises(ValueError):
        percent_difference(0, 5)


def test_submission_modes():
    assert SubmissionMode.local().declared_overhead_s == 0
    w = SubmissionMode.wrapped(3)
    assert w.kind == "wrapped" and w.declared_overhead_s == 3 and w.prefix_cmd[0] == "sh"
    with pytest.raises(ConfigError):
        SubmissionMode("local", ("sh",), 0)
    with pytest.raises(ConfigError):
        SubmissionMode("remote")


def test_sequential_schedule():
    settle = 1
    t0 = time.time()
    recs = run_master_slave(cpu_jobs(2, 2, 2), SubmissionMode.local(), settle)
    wall = time.time() - t0
    assert wall >= 3 * 2 + 2 * settle
    assert [r.status for r in recs] == ["ok"] * 3
    for r in recs:
        assert r.submit_t <= r.start_t <= r.end_t
        assert r.observed_s >= r.expected_s
    for a, b in zip(recs, recs[1:]):
        assert b.start_t >= a.end_t
        assert b.submit_t - a.end_t >= settle - 1


def test_wrapped_adds_declared_delay():
    local = run_master_slave(cpu_jobs(2), SubmissionMode.local(), 0)[0]
    wrapped = run_master_slave(cpu_jobs(2), SubmissionMode.wrapped(2), 0)[0]
    assert wrapped.observed_s - wrapped.expected_s >= 2 - 1
    assert percent_difference(2, wrapped.observed_s) > percent_difference(2, local.observed_s)


def test_failed_jobs_flagged_and_run_continues():
    bad_exit = SubmissionMode("wrapped", ("sh", "-c", "exit 3", "x"), 0)
    recs = run_master_slave(cpu_jobs(1, 1), bad_exit, 0)
    assert [r.status for r in recs] == ["failed", "failed"]
    missing = SubmissionMode("wrapped", ("/nonexistent/launcher",), 0)
    recs = run_master_slave(cpu_jobs(1, 1), missing, 0)
    assert [r.status for r in recs] == ["failed", "failed"]
    assert all(r.submit_t <= r.start_t <= r.end_t for r in recs)


def test_network_job_gets_inprocess_sink():
    js = JobSet((JobSpec("net", LoadParams(net_seconds=1, mem_bytes=1 << 20)),), 0, 3, 1, (0, 0), 1)
    (rec,) = run_master_slave(js, SubmissionMode.local(), 0)
    assert rec.status == "ok"
    assert rec.observed_s >= 1


def test_records_csv_round_trip(tmp_path):
    recs = [JobRecord("job000", "local", 10, 11, 42, 30.0), JobRecord("job001", "wrapped", 50, 50, 85, 31.5, "failed")]
    path = str(tmp_path / "r.csv")
    write_records(path, recs)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["job_id", "mode", "submit_t", "start_t", "end_t", "expected_s", "observed_s", "status"]
    assert rows[1] == ["job000", "local", "10", "11", "42", "30", "31", "ok"]
    assert read_records(path) == recs


def test_markers_written_when_collector_offline(tmp_path):
    recs = [JobRecord(f"job{i:03d}", "local", 100 * i, 100 * i, 100 * i + 30, 30.0) for i in range(50)]
    path = str(tmp_path / "markers.csv")
    n = emit_job_markers(recs, TransportConfig("unicast", f"127.0.0.1:{free_udp_port()}"), path, host="h")
    assert n == 100
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 100
    by_job = {}
    for row in rows:
        by_job.setdefault(row["job_id"], {})[row["event"]] = int(row["t"])
    assert all(by_job[r.job_id] == {"job.start": r.start_t, "job.end": r.end_t} for r in recs)


def test_markers_on_the_wire(tmp_path):
    recs = [JobRecord("job000", "local", 5, 6, 20, 14.0), JobRecord("job001", "local", 30, 30, 50, 20.0)]
    got = []
    stop = threading.Event()
    with Receiver(TransportConfig("unicast", "127.0.0.1:0")) as r:
        th = threading.Thread(target=r.recv_loop, args=(got.append, stop), daemon=True)
        th.start()
        emit_job_markers(recs, TransportConfig("unicast", f"127.0.0.1:{r.port}"), None, host="n1")
        deadline = time.time() + 3
        while len(got) < 4 and time.time() < deadline:
            time.sleep(0.01)
        stop.set()
        th.join()
    events = sorted((p.t, p.metrics[0].name, p.metrics[0].group, p.metrics[0].value) for p in got)
    assert events == [(6, "job.start", "job000", 0), (20, "job.end", "job000", 0),
                      (30, "job.start", "job001", 1), (50, "job.end", "job001", 1)]


def test_cli_dry_run_is_reproducible(capsys):
    assert main(["--jobs", "5", "--seed", "9", "--dry-run"]) == 0
    first = capsys.readouterr().out
    assert main(["--jobs", "5", "--seed", "9", "--dry-run"]) == 0
    assert capsys.readouterr().out == first
    assert first.count("\njob0") == 5


def test_cli_config_error(capsys):
    assert main(["--jobs", "0"]) == 2
    assert main(["--mem", "16M"]) == 2
    assert "harness:" in capsys.readouterr().err


def test_cli_runs_jobs(tmp_path):
    records = tmp_path / "r.csv"
    markers = tmp_path / "m.csv"
    rc = main(["--jobs", "2", "--xmin", "1", "--max-expected", "3", "--settle", "0",
               "--records", str(records), "--markers", str(markers), "--mem", "0..1K"])
    assert rc == 0
    recs = read_records(str(records))
    assert len(recs) == 2 and all(r.status == "ok" for r in recs)
    assert len(list(csv.DictReader(open(markers)))) == 4
