from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any

from dssim.config import log_resolved_sim_config, resolve_sim_config
from dssim.kernel import DeadlockError, RunOptions, run
from dssim.loaders import (
    DescriptionError,
    dump_builtins,
    dump_table,
    load_table,
    load_workload,
    resolve_app,
    resolve_soc,
)
from dssim.model import AppGraph, CommParams, ResourceDb, validate_app, validate_soc
from dssim.oracle import OracleTooLargeError, UnschedulableError, optimal_single_job
from dssim.report import OutputError, SweepResult, sweep, write_outputs
from dssim.sched import SCHEDULER_NAMES, MissingTableEntryError, StaticTable, build_scheduler, validate_table
from dssim.workload import ArrivalPlan, Distribution

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2
EXIT_DEADLOCK = 3
EXIT_INTERRUPTED = 130

_LOG = logging.getLogger("dssim")


class ConfigError(ValueError):
    pass


def parse_rates(text: str) -> list[float]:
    """``start:stop:step`` (inclusive) or a comma-separated list of jobs/ms."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"Rate range '{text}' must look like start:stop:step.")
        start, stop, step = (float(part) for part in parts)
        if step <= 0 or stop < start:
            raise ConfigError(f"Rate range '{text}' needs step > 0 and stop >= start.")
        count = math.floor((stop - start) / step + 1e-9) + 1
        rates = [round(start + i * step, 9) for i in range(count)]
    else:
        rates = [float(item) for item in text.split(",") if item.strip()]
    if not rates or any(rate <= 0 for rate in rates):
        raise ConfigError(f"Rates '{text}' must be a non-empty list of positive numbers.")
    return rates


def _split_names(text: str) -> list[str]:
    return [item.strip().lower() for item in text.split(",") if item.strip()]


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--soc", default="big_little", help="SoC description file or built-in name (big_little)")
    parser.add_argument("--app", default="wifi_tx", help="Application file or built-in name (wifi_tx)")
    parser.add_argument("--edge-volume", dest="edge_volume_bytes", type=float, default=None,
                        help="Edge data volume in bytes for the built-in application")
    parser.add_argument("--comm-latency", type=float, default=None, help="Interconnect latency override (us)")
    parser.add_argument("--bandwidth", type=float, default=None, help="Interconnect bandwidth override (bytes/us)")
    parser.add_argument("--workspace", default=".", help="Directory used to discover .dssim.toml")


def _add_run_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--duration", type=float, default=1_000_000.0, help="Injection window in us")
    parser.add_argument("--distribution", choices=[d.value for d in Distribution], default=None)
    parser.add_argument("--table", default=None, help="Static table file for the table scheduler")
    parser.add_argument("--governor", default=None, help="performance, powersave, ondemand or constant")
    parser.add_argument("--governor-period", dest="governor_period_us", type=float, default=None,
                        help="Governor period in us")
    parser.add_argument("--up-threshold", type=float, default=None)
    parser.add_argument("--down-threshold", type=float, default=None)
    parser.add_argument("--constant-freq", dest="constant_freq_mhz", type=float, default=None,
                        help="Frequency in MHz for the constant governor")
    parser.add_argument("--warmup", dest="warmup_fraction", type=float, default=None,
                        help="Fraction of the window excluded from averages")
    parser.add_argument("--max-time", dest="max_time_us", type=float, default=None,
                        help="Stop processing events after this time (us)")
    parser.add_argument("--out", dest="out_dir", default=None, help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dssim",
        description="Discrete-event simulator for domain-specific heterogeneous SoCs",
        epilog="Exit codes: 0 success, 1 internal error, 2 validation/config error, 3 deadlock.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Run one simulation and write trace and summary files")
    _add_model_args(simulate)
    _add_run_args(simulate)
    simulate.add_argument("--workload", default=None, help="Workload file (overrides --app/--rate/--duration)")
    simulate.add_argument("--sched", default="etf", help=f"Scheduler: {', '.join(SCHEDULER_NAMES)}")
    simulate.add_argument("--rate", type=float, default=5.0, help="Injection rate in jobs/ms")
    simulate.add_argument("--seed", type=int, default=None)
    simulate.set_defaults(handler=cmd_simulate)

    sweep_parser = sub.add_parser("sweep", help="Sweep injection rates over schedulers and seeds")
    _add_model_args(sweep_parser)
    _add_run_args(sweep_parser)
    sweep_parser.add_argument("--rates", required=True, help="start:stop:step (inclusive) or comma list")
    sweep_parser.add_argument("--sched", default="met,etf,table", help="Comma-separated schedulers")
    sweep_parser.add_argument("--seeds", default=None, help="Comma-separated seeds (default: configured seed)")
    sweep_parser.add_argument("--jobs", type=int, default=None, help="Parallel worker processes")
    sweep_parser.set_defaults(handler=cmd_sweep)

    oracle = sub.add_parser("oracle", help="Compute the optimal single-job static table")
    _add_model_args(oracle)
    oracle.add_argument("--out", dest="out_path", default=None, help="Static table output file")
    oracle.set_defaults(handler=cmd_oracle)

    validate = sub.add_parser("validate", help="Validate description files")
    validate.add_argument("--soc", default="big_little", help="SoC description file or built-in name")
    validate.add_argument("--app", default=None, help="Application file or built-in name")
    validate.add_argument("--table", default=None, help="Static table file")
    validate.add_argument("--workload", default=None, help="Workload file")
    validate.add_argument("--dump", default=None, help="Write the built-in assets into this directory")
    validate.set_defaults(handler=cmd_validate)
    return parser


def _settings_parameters(args: argparse.Namespace) -> dict[str, Any]:
    keys = [
        "governor",
        "governor_period_us",
        "up_threshold",
        "down_threshold",
        "constant_freq_mhz",
        "distribution",
        "edge_volume_bytes",
        "warmup_fraction",
        "out_dir",
        "jobs",
        "seed",
        "max_time_us",
    ]
    return {key: getattr(args, key, None) for key in keys}


def _load_db(args: argparse.Namespace) -> ResourceDb:
    db = resolve_soc(args.soc)
    _fail_on_violations(validate_soc(db), f"SoC {args.soc}")
    if args.comm_latency is not None or args.bandwidth is not None:
        db = db.with_comm(
            CommParams(
                latency_us=db.comm.latency_us if args.comm_latency is None else args.comm_latency,
                bandwidth_bytes_per_us=(
                    db.comm.bandwidth_bytes_per_us if args.bandwidth is None else args.bandwidth
                ),
            )
        )
    return db


def _check_app(app: AppGraph, db: ResourceDb) -> None:
    # Unsupported tasks surface as a deadlock at run time.
    _fail_on_violations(validate_app(app, db, check_support=False), f"app {app.name}")


def _fail_on_violations(violations: list[str], subject: str) -> None:
    if not violations:
        return
    for violation in violations:
        print(f"{subject}: {violation}", file=sys.stderr)
    raise SystemExit(EXIT_INVALID)


def _load_checked_table(path: str, app: AppGraph, db: ResourceDb) -> StaticTable:
    table = load_table(Path(path))
    _fail_on_violations(validate_table(table, app, db), f"table {path}")
    return table


def cmd_simulate(args: argparse.Namespace) -> int:
    resolved = resolve_sim_config(Path(args.workspace), _settings_parameters(args))
    log_resolved_sim_config(resolved)
    settings = resolved.settings
    db = _load_db(args)
    if args.workload:
        plan = load_workload(Path(args.workload), settings.edge_volume_bytes)
    else:
        plan = ArrivalPlan(
            app=resolve_app(args.app, settings.edge_volume_bytes),
            distribution=Distribution(settings.distribution),
            rate_jobs_per_ms=args.rate,
            duration_us=args.duration,
            seed=settings.seed,
        )
    _check_app(plan.app, db)
    table = None
    if args.sched.lower() == "table":
        if not args.table:
            raise ConfigError("Scheduler 'table' requires --table.")
        table = _load_checked_table(args.table, plan.app, db)
    scheduler = build_scheduler(args.sched, table)
    report = run(
        db,
        plan,
        scheduler,
        settings.governor_config(),
        RunOptions(max_time_us=settings.max_time_us, warmup_fraction=settings.warmup_fraction),
    )
    paths = write_outputs(report, Path(settings.out_dir))
    avg = "n/a" if report.avg_job_exec_time_us is None else f"{report.avg_job_exec_time_us:.3f} us"
    print(
        f"jobs injected={report.jobs_injected} completed={report.jobs_completed} "
        f"in_flight={report.in_flight} avg_exec_time={avg} "
        f"throughput={report.throughput_jobs_per_ms:.4f} jobs/ms energy={report.energy_total_mj:.6f} mJ "
        f"(power model: {report.power_model})"
    )
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    resolved = resolve_sim_config(Path(args.workspace), _settings_parameters(args))
    log_resolved_sim_config(resolved)
    settings = resolved.settings
    db = _load_db(args)
    app = resolve_app(args.app, settings.edge_volume_bytes)
    _check_app(app, db)
    rates = parse_rates(args.rates)
    schedulers = _split_names(args.sched)
    unknown = [name for name in schedulers if name not in SCHEDULER_NAMES]
    if not schedulers or unknown:
        raise ConfigError(f"Unknown scheduler(s) {unknown}; expected names from {list(SCHEDULER_NAMES)}.")
    seeds = [int(item) for item in args.seeds.split(",")] if args.seeds else [settings.seed]
    table = None
    if "table" in schedulers:
        if args.table:
            table = _load_checked_table(args.table, app, db)
        else:
            _LOG.info("No --table given; using the single-job oracle table for %s", app.name)
            table = optimal_single_job(app, db).table
    result: SweepResult = sweep(
        db,
        app,
        schedulers,
        rates,
        args.duration,
        seeds,
        table=table,
        governor=settings.governor_config(),
        options=RunOptions(
            max_time_us=settings.max_time_us,
            warmup_fraction=settings.warmup_fraction,
            record_events=False,
        ),
        distribution=Distribution(settings.distribution),
        jobs=settings.jobs,
    )
    for path in write_outputs(result, Path(settings.out_dir)):
        print(f"wrote {path} ({len(result.rows)} rows)")
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    resolved = resolve_sim_config(Path(args.workspace), {"edge_volume_bytes": args.edge_volume_bytes})
    settings = resolved.settings
    db = _load_db(args)
    app = resolve_app(args.app, settings.edge_volume_bytes)
    _check_app(app, db)
    result = optimal_single_job(app, db)
    out_path = Path(args.out_path) if args.out_path else Path(settings.out_dir) / f"{app.name}.table.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    dump_table(result.table, out_path)
    print(f"makespan: {result.makespan_us:g} us ({result.explored} assignments explored)")
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    if args.dump:
        for path in dump_builtins(Path(args.dump)):
            print(f"wrote {path}")
    db = resolve_soc(args.soc)
    violations = [f"SoC {args.soc}: {item}" for item in validate_soc(db)]
    app: AppGraph | None = None
    if args.workload:
        app = load_workload(Path(args.workload)).app
    if args.app:
        app = resolve_app(args.app)
    if app is not None:
        violations.extend(f"app {app.name}: {item}" for item in validate_app(app, db))
    if args.table:
        table = load_table(Path(args.table))
        if app is None:
            violations.append(f"table {args.table}: --app is required to validate a table")
        else:
            violations.extend(f"table {args.table}: {item}" for item in validate_table(table, app, db))
    for violation in violations:
        print(violation, file=sys.stderr)
    if violations:
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("DSSIM_LOG_LEVEL", "INFO"))
    try:
        code = args.handler(args)
    except KeyboardInterrupt:
        print("\ndssim was interrupted by the user.", file=sys.stderr)
        raise SystemExit(EXIT_INTERRUPTED) from None
    except DeadlockError as exc:
        print(f"deadlock: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_DEADLOCK) from None
    except (
        DescriptionError,
        OutputError,
        OracleTooLargeError,
        UnschedulableError,
        MissingTableEntryError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID) from None
    except FileNotFoundError as exc:
        print(f"error: {exc.filename or exc}: file not found", file=sys.stderr)
        raise SystemExit(EXIT_INVALID) from None
    except Exception as exc:
        _LOG.debug("Internal error", exc_info=True)
        print(f"internal error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_INTERNAL) from None
    if code:
        raise SystemExit(code)


if __name__ == "__main__":
    main()
