"""Offline analysis over exported metric CSVs and JobRecord files.

Overhead statistics per submission mode, total-minus-attributed CPU
difference series, removal of samples near job start/end markers, and
tidy CSV data files for each figure.
"""

from __future__ import annotations

import argparse
import bisect
import csv
import io
import math
import os
import statistics
import sys
from collections import Counter
from dataclasses import dataclass

from gridmeter.errors import AlignmentError, EmptyInputError, GridMeterError
from gridmeter.harness import percent_difference, read_records
from gridmeter.rrdb.db import read_export

TOTAL_METRIC = "cpu_total"
ATTRIBUTED_METRIC = "cpu_attributed"
IDLE_METRIC = "cpu_idle"
DIFF_COLUMNS = ["t", "value", "interval_s"]
PLOT_COLUMNS = ["t", "series", "value", "marker"]


@dataclass(frozen=True)
class UtilisationSeries:
    points: tuple  # ((t, percent), ...) strictly increasing in t
    interval_s: float
    kind: str = "total_busy"

    def __post_init__(self):
        ts = [t for t, _ in self.points]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("timestamps must be strictly increasing")
        if self.interval_s <= 0:
            raise ValueError("interval_s must be positive")
        if self.kind not in ("total_busy", "attributed", "idle"):
            raise ValueError(f"unknown series kind {self.kind!r}")

    def gaps(self) -> list[float]:
        """Timestamps missing from the uniform grid between first and last."""
        out = []
        for (a, _), (b, _) in zip(self.points, self.points[1:]):
            k = round((b - a) / self.interval_s)
            out.extend(a + i * self.interval_s for i in range(1, k))
        return out


@dataclass(frozen=True)
class DiffSeries:
    points: tuple  # ((t, total - attributed), ...)
    interval_s: float


@dataclass(frozen=True)
class FilterSpec:
    window_intervals: int = 1

    def __post_init__(self):
        if self.window_intervals < 0:
            raise ValueError("window_intervals must be >= 0")


@dataclass(frozen=True)
class ModeStats:
    count: int
    min: float
    max: float
    mean: float
    median: float


@dataclass(frozen=True)
class OverheadReport:
    per_mode: dict  # mode -> ModeStats
    per_job: list  # (job_id, mode, expected_s, observed_s, percent)


@dataclass(frozen=True)
class BalanceStats:
    mean: float
    mean_abs: float
    max_abs: float
    positive: int
    negative: int


def overhead_report(records) -> OverheadReport:
    ok = [r for r in records if r.status == "ok"]
    if not ok:
        raise EmptyInputError("no successful job records")
    per_job = [(r.job_id, r.mode, r.expected_s, r.observed_s, percent_difference(r.expected_s, r.observed_s))
               for r in ok]
    per_mode = {}
    for mode in sorted({r.mode for r in ok}):
        pct = [p for _, m, _, _, p in per_job if m == mode]
        per_mode[mode] = ModeStats(len(pct), min(pct), max(pct), math.fsum(pct) / len(pct),
                                   statistics.median(pct))
    return OverheadReport(per_mode, per_job)


def utilisation_difference(total: UtilisationSeries, attributed: UtilisationSeries) -> DiffSeries:
    """Pointwise ``total - attributed`` at timestamps present in both."""
    if not math.isclose(total.interval_s, attributed.interval_s):
        raise AlignmentError(f"interval mismatch: {total.interval_s}s vs {attributed.interval_s}s")
    other = dict(attributed.points)
    pts = tuple((t, v - other[t]) for t, v in total.points if t in other)
    return DiffSeries(pts, total.interval_s)


def in_marker_window(t: float, markers_sorted: list, width: float) -> bool:
    i = bisect.bisect_left(markers_sorted, t - width)
    return i < len(markers_sorted) and markers_sorted[i] <= t + width


def filter_transients(diff: DiffSeries, markers, spec: FilterSpec = FilterSpec()) -> tuple[DiffSeries, int]:
    """Drop samples within ``window_intervals * interval_s`` of any marker."""
    ms = sorted(markers)
    width = spec.window_intervals * diff.interval_s
    kept = tuple((t, v) for t, v in diff.points if not in_marker_window(t, ms, width))
    return DiffSeries(kept, diff.interval_s), len(diff.points) - len(kept)


def balance_statistics(diff: DiffSeries) -> BalanceStats:
    vals = [v for _, v in diff.points]
    if not vals:
        raise EmptyInputError("empty difference series")
    return BalanceStats(
        mean=math.fsum(vals) / len(vals),
        mean_abs=math.fsum(abs(v) for v in vals) / len(vals),
        max_abs=max(abs(v) for v in vals),
        positive=sum(v > 0 for v in vals),
        negative=sum(v < 0 for v in vals),
    )


def _fmt(v) -> str:
    if isinstance(v, float):
        return str(int(v)) if v.is_integer() else repr(v)
    return str(v)


def emit_plot_data(path: str, series: dict, markers=()) -> int:
    """Write a tidy CSV: one row per (t, series) value and one per marker.

    ``series`` maps a name to ``[(t, value), ...]``; ``markers`` is a list
    of ``(t, label, value)``. Rows are sorted so output is reproducible.
    Returns the number of data rows written.
    """
    rows = [(t, name, v, 0) for name, pts in series.items() for t, v in pts]
    rows += [(t, label, v, 1) for t, label, v in markers]
    rows.sort(key=lambda r: (r[0], r[3], r[1]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for t, name, v, m in rows:
            w.writerow([_fmt(t), name, _fmt(v), m])
    return len(rows)


def infer_interval(ts) -> float:
    """Most common spacing between consecutive timestamps (smallest on ties)."""
    deltas = [b - a for a, b in zip(ts, ts[1:]) if b > a]
    if not deltas:
        raise EmptyInputError("need at least two samples to infer the interval")
    counts = Counter(deltas)
    best = max(counts.values())
    return min(d for d, c in counts.items() if c == best)


def load_series(records, metric: str, group: str = "", host: str | None = None,
                kind: str = "total_busy", interval_s: float | None = None) -> UtilisationSeries:
    """Pick one (host, metric, group) series out of export records."""
    hosts = sorted({r.series_key[0] for r in records if r.series_key[1:] == (metric, group)})
    if not hosts:
        raise EmptyInputError(f"no {metric!r} series (group {group!r}) in export")
    host = host or hosts[0]
    pts = sorted((r.t, r.value) for r in records if r.series_key == (host, metric, group))
    if not pts:
        raise EmptyInputError(f"no {metric!r} samples for host {host!r}")
    interval = interval_s or (infer_interval([t for t, _ in pts]) if len(pts) > 1 else 1.0)
    return UtilisationSeries(tuple(pts), interval, kind)


def read_markers(path: str) -> list[float]:
    """Marker times from a marker CSV (``t`` column) or a JobRecord CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    if "t" in rows[0]:
        return sorted(float(r["t"]) for r in rows)
    return sorted(float(r[c]) for r in rows for c in ("start_t", "end_t"))


def record_markers(records) -> list[tuple]:
    """``(t, label, ordinal)`` marker rows for every record."""
    out = []
    for k, r in enumerate(records):
        out.append((r.start_t, "job.start", k))
        out.append((r.end_t, "job.end", k))
    return out


def write_diff(diff: DiffSeries, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(DIFF_COLUMNS)
    for t, v in diff.points:
        w.writerow([_fmt(t), _fmt(v), _fmt(diff.interval_s)])


def read_diff(path: str) -> DiffSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyInputError(f"{path}: no samples")
    pts = tuple((float(r["t"]), float(r["value"])) for r in rows)
    return DiffSeries(pts, float(rows[0]["interval_s"]))


def _fmt_stats(prefix: str, s: BalanceStats) -> str:
    return (f"{prefix} mean={s.mean:.3f} mean_abs={s.mean_abs:.3f} max_abs={s.max_abs:.3f} "
            f"positive={s.positive} negative={s.negative}")


def _export_path(path: str) -> str:
    return os.path.join(path, "metrics.csv") if os.path.isdir(path) else path


def cmd_overhead(args) -> int:
    rep = overhead_report(read_records(args.records))
    print("mode,count,min,max,mean,median")
    for mode, s in rep.per_mode.items():
        print(f"{mode},{s.count},{s.min:.3f},{s.max:.3f},{s.mean:.3f},{s.median:.3f}")
    if args.per_job:
        print("job_id,mode,expected_s,observed_s,percent_difference")
        for job_id, mode, exp, obs, pct in rep.per_job:
            print(f"{job_id},{mode},{_fmt(exp)},{obs},{pct:.3f}")
    return 0


def cmd_diff(args) -> int:
    total = load_series(read_export(_export_path(args.total)), TOTAL_METRIC, "", args.host)
    attributed = load_series(read_export(_export_path(args.attributed)), ATTRIBUTED_METRIC,
                             args.group, args.host, "attributed")
    diff = utilisation_difference(total, attributed)
    _write_out(args.out, lambda fh: write_diff(diff, fh))
    if diff.points:
        print(_fmt_stats("diff", balance_statistics(diff)), file=sys.stderr)
    return 0


def cmd_filter(args) -> int:
    diff = read_diff(args.diff)
    filtered, removed = filter_transients(diff, read_markers(args.markers), FilterSpec(args.window))
    _write_out(args.out, lambda fh: write_diff(filtered, fh))
    print(f"removed={removed} kept={len(filtered.points)}", file=sys.stderr)
    print(_fmt_stats("before", balance_statistics(diff)), file=sys.stderr)
    if filtered.points:
        print(_fmt_stats("after", balance_statistics(filtered)), file=sys.stderr)
    return 0


def cmd_figures(args) -> int:
    records = read_records(args.records)
    exported = read_export(_export_path(args.export_dir))
    total = load_series(exported, TOTAL_METRIC, "", args.host)
    attributed = load_series(exported, ATTRIBUTED_METRIC, args.group, args.host, "attributed",
                             interval_s=total.interval_s)
    diff = utilisation_difference(total, attributed)
    filtered, removed = filter_transients(diff, [t for t, _, _ in record_markers(records)],
                                          FilterSpec(args.window))
    markers = record_markers(records)
    os.makedirs(args.out, exist_ok=True)

    fig1 = {}
    for r in records:
        if r.status == "ok":
            fig1.setdefault(r.mode, []).append((r.start_t, percent_difference(r.expected_s, r.observed_s)))
    emit_plot_data(os.path.join(args.out, "fig1.csv"), fig1)
    emit_plot_data(os.path.join(args.out, "fig2.csv"),
                   {"total": list(total.points), "attributed": list(attributed.points)}, markers)
    emit_plot_data(os.path.join(args.out, "fig3a.csv"), {"diff": list(diff.points)}, markers)
    emit_plot_data(os.path.join(args.out, "fig3b.csv"), {"diff_filtered": list(filtered.points)}, markers)
    print(f"wrote fig1 fig2 fig3a fig3b to {args.out} (interval {_fmt(total.interval_s)}s, "
          f"{len(diff.points)} diff samples, {removed} filtered)")
    if diff.points:
        print(_fmt_stats("fig3a", balance_statistics(diff)))
    if filtered.points:
        print(_fmt_stats("fig3b", balance_statistics(filtered)))
    return 0


def _write_out(path, write) -> None:
    if path:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write(fh)
    else:
        buf = io.StringIO()
        write(buf)
        sys.stdout.write(buf.getvalue())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="analyze", description="Offline analysis of job records and metric exports.")
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("overhead", help="percent difference between expected and observed run times")
    o.add_argument("--records", required=True)
    o.add_argument("--per-job", action="store_true")
    o.set_defaults(func=cmd_overhead)

    d = sub.add_parser("diff", help="total minus attributed CPU series")
    d.add_argument("--total", required=True, help="export CSV (or directory) holding cpu_total")
    d.add_argument("--attributed", required=True, help="export CSV (or directory) holding cpu_attributed")
    d.add_argument("--group", default="all")
    d.add_argument("--host")
    d.add_argument("--out", help="output CSV (default stdout)")
    d.set_defaults(func=cmd_diff)

    f = sub.add_parser("filter", help="drop samples near job start/end markers")
    f.add_argument("--diff", required=True)
    f.add_argument("--markers", required=True, help="marker CSV or JobRecord CSV")
    f.add_argument("--window", type=int, default=1, help="half-width in sampling intervals")
    f.add_argument("--out", help="output CSV (default stdout)")
    f.set_defaults(func=cmd_filter)

    g = sub.add_parser("figures", help="write fig1/fig2/fig3a/fig3b data files")
    g.add_argument("--export-dir", required=True)
    g.add_argument("--records", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--group", default="all")
    g.add_argument("--host")
    g.add_argument("--window", type=int, default=1)
    g.set_defaults(func=cmd_figures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GridMeterError, ValueError, OSError, KeyError) as e:
        print(f"analyze: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
