"""Command-line entry point: ``dcetomo {run,sweep,validate,schedule}``.

Exit codes: 0 success, 1 scenario failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from ..errors import ConfigError, TomographyError
from ..passive import ScheduleState, schedule_rows, write_schedule_csv
from . import runner
from .config import dump_normalized, expand_sweep, load_document, validate_config

EXIT_OK, EXIT_SCENARIO, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("dcetomo")


def _load(path):
    try:
        return load_document(path)
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from None


def _report_config_error(exc: ConfigError) -> int:
    print("configuration error:", file=sys.stderr)
    for d in exc.diagnostics:
        print(f"  - {d}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_run(args) -> int:
    doc = _load(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    cfg = validate_config(doc)
    os.makedirs(args.output, exist_ok=True)
    with open(os.path.join(args.output, "config.normalized.yaml"), "w") as fh:
        fh.write(dump_normalized(cfg))
    t0 = time.perf_counter()
    try:
        run = runner.simulate(cfg)
        rows = runner.rows_from_run(run)
    except TomographyError as exc:
        print(f"scenario {cfg.scenario_id} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    log.info("simulated %d events in %.1fs", run.sim.events_processed, time.perf_counter() - t0)
    runner.write_results(rows, args.output)
    write_schedule_csv(run.driver.state, os.path.join(args.output, "schedule.csv"))
    if args.verbose_trace:
        run.sim.trace.write_csv(os.path.join(args.output, "trace.csv"))
        runner.write_delay_series(run, os.path.join(args.output, "fig5.csv"))
    if not args.no_plots:
        from .plotting import render_report

        render_report(rows, args.output, run)
    print(runner.summary_table(rows))
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _load(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
        doc.get("sweep", {}).pop("seed", None)
    configs = expand_sweep(doc)
    os.makedirs(args.output, exist_ok=True)
    with open(os.path.join(args.output, "config.normalized.yaml"), "w") as fh:
        fh.write(dump_normalized(configs))
    t0 = time.perf_counter()
    rows = runner.sweep(configs, workers=args.workers)
    log.info("%d scenarios in %.1fs", len(configs), time.perf_counter() - t0)
    runner.write_results(rows, args.output)
    if not args.no_plots:
        from .plotting import render_report

        render_report(rows, args.output)
    print(runner.summary_table(rows))
    try:
        print(f"fig6 regression slope: {runner.fig6_slope(rows):.4f}")
    except ValueError:
        pass
    failed = sorted({r.scenario_id for r in rows if not r.ok})
    if failed:
        print(f"{len(failed)} scenario(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_SCENARIO
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = _load(args.config)
    configs = expand_sweep(doc) if "sweep" in doc else validate_config(doc)
    sys.stdout.write(dump_normalized(configs))
    return EXIT_OK


def cmd_schedule(args) -> int:
    if args.config:
        cfg = validate_config(_load(args.config))
        n = len(cfg.topology["receivers"])
        tau = cfg.tau if args.tau is None else args.tau
    elif args.hosts is not None:
        n, tau = args.hosts, 1550 if args.tau is None else args.tau
    else:
        raise ConfigError(["schedule: give a config file or --hosts"])
    try:
        state = ScheduleState(n, tau)
    except (TomographyError, ValueError) as exc:
        raise ConfigError([f"schedule: {exc}"]) from None
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        write_schedule_csv(state, os.path.join(args.output, "schedule.csv"))
    else:
        print("round,order,marked_pairs,counts")
        for r in schedule_rows(state):
            print(f"{r['round']},{r['order']},{r['marked_pairs']},{r['counts']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcetomo", description="Delay correlation tomography workbench")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a single scenario")
    r.add_argument("config")
    r.add_argument("-o", "--output", default="out")
    r.add_argument("--seed", type=int)
    r.add_argument("--verbose-trace", action="store_true", help="also write trace.csv and fig5.csv")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a scenario matrix")
    s.add_argument("config")
    s.add_argument("-o", "--output", default="out")
    s.add_argument("--seed", type=int, help="replace the sweep's seeds with this one")
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate", help="check a config and print it normalized")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("schedule", help="dump the passive rotation plan")
    c.add_argument("config", nargs="?")
    c.add_argument("--hosts", type=int)
    c.add_argument("--tau", type=int)
    c.add_argument("-o", "--output")
    c.set_defaults(func=cmd_schedule)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _report_config_error(exc)


if __name__ == "__main__":
    sys.exit(main())
