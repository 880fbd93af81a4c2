"""``loadgen``: run one emulated job."""

from __future__ import annotations

import argparse
import logging
import sys

from gridmeter.errors import ConfigError, TableError
from gridmeter.loadgen.job import JobFailed, append_report, run_job
from gridmeter.loadgen.params import parse_config
from gridmeter.loadgen.states import default_table, parse_table

log = logging.getLogger("gridmeter.loadgen")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loadgen", description="State-machine CPU/memory/network load generator.")
    p.add_argument("--config", help="key=value parameter file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one parameter (repeatable)")
    p.add_argument("--table", help="transition table file (default: deterministic staging order)")
    p.add_argument("--report", help="append the LoadReport as a CSV row to this file")
    p.add_argument("--seed", type=lambda s: int(s, 0), help="RNG seed (overrides rng_seed)")
    p.add_argument("--job-id", default="job", help="job identifier for the report row")
    p.add_argument("--tag", help="marker token; carried on the command line so monitors can find the job")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s loadgen %(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"rng_seed={args.seed}")
    try:
        text = ""
        if args.config:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        params = parse_config(text, overrides)
        table = default_table()
        if args.table:
            with open(args.table, encoding="utf-8") as fh:
                table = parse_table(fh.read())
    except (OSError, ConfigError, TableError) as e:
        print(f"loadgen: {e}", file=sys.stderr)
        return 2

    status = 0
    try:
        report = run_job(params, table)
    except JobFailed as e:
        print(f"loadgen: job {args.job_id} failed: {e}", file=sys.stderr)
        report = e.report
        status = 1
    log.info("job %s done: expected %.3fs observed %.3fs", args.job_id,
             report.expected_total, report.observed_total)
    if args.report:
        append_report(args.report, args.job_id, report)
    return status


if __name__ == "__main__":
    raise SystemExit(main())
