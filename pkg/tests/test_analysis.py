import csv

import pytest
from hypothesis import given, settings, strategies as st

from gridmeter.analysis import (
    DiffSeries,
    FilterSpec,
    UtilisationSeries,
    balance_statistics,
    emit_plot_data,
    filter_transients,
    infer_interval,
    main,
    overhead_report,
    read_diff,
    utilisation_difference,
)
from gridmeter.errors import AlignmentError, EmptyInputError
from gridmeter.harness import JobRecord, write_records
from gridmeter.rrdb.db import EXPORT_COLUMNS


def series(pairs, interval=15, kind="total_busy"):
    return UtilisationSeries(tuple(pairs), interval, kind)


def test_overhead_zero():
    recs = [JobRecord(f"j{i}", "local", 0, 0, 30, 30.0) for i in range(4)]
    rep = overhead_report(recs)
    assert rep.per_mode["local"].mean == 0.0
    assert rep.per_mode["local"].count == 4


def test_overhead_wrapped_three_seconds_on_thirty():
    recs = [JobRecord(f"j{i}", "wrapped", 0, 0, 33, 30.0) for i in range(5)]
    recs.append(JobRecord("late", "wrapped", 0, 0, 34, 30.0))
    assert overhead_report(recs).per_mode["wrapped"].mean == pytest.approx(10.0, abs=3)


def test_overhead_skips_failed_and_groups_modes():
    recs = [JobRecord("a", "local", 0, 0, 31, 30.0), JobRecord("b", "wrapped", 0, 0, 36, 30.0),
            JobRecord("c", "local", 0, 0, 99, 30.0, "failed")]
    rep = overhead_report(recs)
    assert set(rep.per_mode) == {"local", "wrapped"}
    assert rep.per_mode["local"].count == 1
    assert rep.per_mode["wrapped"].max == pytest.approx(20.0)
    with pytest.raises(EmptyInputError):
        overhead_report([recs[2]])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 500), st.integers(0, 100), st.sampled_from(["local", "wrapped"])),
                min_size=1, max_size=30))
def test_overhead_mean_matches_naive(jobs):
    recs = [JobRecord(f"j{i}", mode, 0, 0, exp + extra, float(exp)) for i, (exp, extra, mode) in enumerate(jobs)]
    rep = overhead_report(recs)
    for mode, stats in rep.per_mode.items():
        pcts = [(r.observed_s - r.expected_s) / r.expected_s * 100 for r in recs if r.mode == mode]
        assert stats.mean == pytest.approx(sum(pcts) / len(pcts), rel=1e-12, abs=1e-12)
        assert stats.count == len(pcts)
        assert stats.min == min(pcts) and stats.max == max(pcts)


def test_difference_examples():
    tot = series([(15, 50.0), (30, 60.0)])
    att = series([(15, 45.0), (30, 50.0)], kind="attributed")
    assert utilisation_difference(tot, att).points == ((15, 5.0), (30, 10.0))
    assert all(v == 0 for _, v in utilisation_difference(tot, tot).points)


def test_difference_gap_propagates():
    tot = series([(15, 1.0), (30, 2.0), (45, 3.0)])
    att = series([(15, 1.0), (45, 1.0)], kind="attributed")
    assert [t for t, _ in utilisation_difference(tot, att).points] == [15, 45]
    assert att.gaps() == [30]


def test_difference_interval_mismatch():
    with pytest.raises(AlignmentError):
        utilisation_difference(series([(15, 1.0)]), series([(15, 1.0)], interval=1))


def test_series_must_increase():
    with pytest.raises(ValueError):
        series([(30, 1.0), (15, 2.0)])


values = st.floats(-100, 200, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.integers(0, 100), values), st.dictionaries(st.integers(0, 100), values))
def test_difference_antisymmetric(a, b):
    sa, sb = series(sorted((15 * k, v) for k, v in a.items())), series(sorted((15 * k, v) for k, v in b.items()))
    ab = utilisation_difference(sa, sb).points
    ba = utilisation_difference(sb, sa).points
    assert [t for t, _ in ab] == [t for t, _ in ba] == sorted(15 * k for k in set(a) & set(b))
    assert all(x == -y for (_, x), (_, y) in zip(ab, ba))


def test_filter_identity_without_markers():
    d = DiffSeries(((15, 1.0), (30, -2.0)), 15)
    out, removed = filter_transients(d, [])
    assert out == d and removed == 0


def test_filter_window_arithmetic():
    d = DiffSeries(tuple((t, 1.0) for t in range(70, 131)), 15)
    out, removed = filter_transients(d, [100], FilterSpec(1))
    assert removed == 31
    assert {t for t, _ in out.points} == set(range(70, 85)) | set(range(116, 131))


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60), values), unique_by=lambda p: p[0]),
       st.lists(st.integers(-5, 70), max_size=6), st.integers(0, 3), st.sampled_from([1, 5, 15]))
def test_filter_removes_exactly_marker_windows(pts, markers, k, interval):
    d = DiffSeries(tuple(sorted((i * interval, v) for i, v in pts)), interval)
    ms = [m * interval / 3 for m in markers]
    out, removed = filter_transients(d, ms, FilterSpec(k))
    inside = {t for t, _ in d.points if any(abs(t - m) <= k * interval for m in ms)}
    assert {t for t, _ in out.points} == {t for t, _ in d.points} - inside
    assert removed == len(inside)
    if out.points:
        assert balance_statistics(out).max_abs <= balance_statistics(d).max_abs


def test_filter_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(-1)


def test_balance_statistics():
    zero = balance_statistics(DiffSeries(((1, 0.0), (2, 0.0)), 1))
    assert (zero.mean, zero.mean_abs, zero.max_abs, zero.positive, zero.negative) == (0, 0, 0, 0, 0)
    s = balance_statistics(DiffSeries(((1, 10.0), (2, -10.0)), 1))
    assert (s.mean, s.mean_abs, s.max_abs, s.positive, s.negative) == (0, 10, 10, 1, 1)
    with pytest.raises(EmptyInputError):
        balance_statistics(DiffSeries((), 1))


def test_plot_data_rows_and_determinism(tmp_path):
    a = [(t, t / 3) for t in range(0, 150, 15)]
    b = [(t, 100 - t / 7) for t in range(0, 150, 15)]
    markers = [(20, "job.start", 0), (95, "job.end", 0), (110, "job.start", 1)]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert emit_plot_data(str(p1), {"total": a, "attributed": b}, markers) == 2 * len(a) + 3
    emit_plot_data(str(p2), {"attributed": b, "total": a}, list(reversed(markers)))
    assert p1.read_bytes() == p2.read_bytes()
    rows = list(csv.DictReader(open(p1)))
    assert sum(r["marker"] == "1" for r in rows) == 3


def test_plot_data_missing_values_omitted(tmp_path):
    p = tmp_path / "x.csv"
    emit_plot_data(str(p), {"total": [(15, 1.0), (30, 2.0)], "attributed": [(15, 1.0)]})
    rows = list(csv.DictReader(open(p)))
    assert [(r["t"], r["series"]) for r in rows] == [("15", "attributed"), ("15", "total"), ("30", "total")]


def test_plot_data_unwritable(tmp_path):
    with pytest.raises(OSError):
        emit_plot_data(str(tmp_path / "missing" / "x.csv"), {"a": [(1, 1.0)]})


def test_infer_interval():
    assert infer_interval([15, 30, 45, 75, 90]) == 15
    with pytest.raises(EmptyInputError):
        infer_interval([5])


def write_export(path, host, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXPORT_COLUMNS)
        for t, metric, group, value in rows:
            w.writerow([t, host, metric, group, value, 1])


def test_cli_diff_filter_figures(tmp_path, capsys):
    export = tmp_path / "exp"
    export.mkdir()
    rows = []
    for k in range(1, 21):
        t = 1000 + 15 * k
        busy = 100.0 if 1045 <= t <= 1200 else 2.0
        att = 90.0 if 1060 <= t <= 1200 else 0.0
        rows += [(t, "cpu_total", "", busy), (t, "cpu_attributed", "all", att), (t, "cpu_idle", "", 100 - busy)]
    write_export(export / "metrics.csv", "n1", rows)
    records = tmp_path / "r.csv"
    write_records(str(records), [JobRecord("job000", "local", 1044, 1045, 1200, 150.0)])

    diff_csv = tmp_path / "diff.csv"
    assert main(["diff", "--total", str(export), "--attributed", str(export), "--out", str(diff_csv)]) == 0
    d = read_diff(str(diff_csv))
    assert d.interval_s == 15 and len(d.points) == 20
    assert dict(d.points)[1045] == 100.0

    filt = tmp_path / "f.csv"
    assert main(["filter", "--diff", str(diff_csv), "--markers", str(records), "--window", "1",
                 "--out", str(filt)]) == 0
    err = capsys.readouterr().err
    assert "removed=5" in err
    kept = {t for t, _ in read_diff(str(filt)).points}
    assert kept == {t for t, _ in d.points} - {1030, 1045, 1060, 1195, 1210}

    out = tmp_path / "figs"
    assert main(["figures", "--export-dir", str(export), "--records", str(records), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["fig1.csv", "fig2.csv", "fig3a.csv", "fig3b.csv"]
    fig1 = list(csv.DictReader(open(out / "fig1.csv")))
    assert fig1 == [{"t": "1045", "series": "local", "value": "3.3333333333333335", "marker": "0"}]
    first = (out / "fig3a.csv").read_bytes()
    main(["figures", "--export-dir", str(export), "--records", str(records), "--out", str(out)])
    assert (out / "fig3a.csv").read_bytes() == first


def test_cli_errors(tmp_path, capsys):
    empty = tmp_path / "r.csv"
    write_records(str(empty), [])
    assert main(["overhead", "--records", str(empty)]) == 1
    assert main(["overhead", "--records", str(tmp_path / "nope.csv")]) == 1
    assert "analyze:" in capsys.readouterr().err


def test_cli_overhead(tmp_path, capsys):
    r = tmp_path / "r.csv"
    write_records(str(r), [JobRecord("a", "local", 0, 0, 101, 100.0), JobRecord("b", "local", 0, 0, 103, 100.0)])
    assert main(["overhead", "--records", str(r), "--per-job"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[1] == "local,2,1.000,3.000,2.000,2.000"
    assert out[3] == "a,local,100,101,1.000"
