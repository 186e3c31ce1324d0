"""Metrics, injection-rate sweeps and report files."""

from __future__ import annotations

import bisect
import csv
import json
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from dssim.kernel import (
    DeadlockError,
    EventRecord,
    FreqChange,
    RunOptions,
    SimState,
    TraceRecord,
    simulate,
)
from dssim.model import AppGraph, PeRef, ResourceDb, ns_to_us, us_to_ns
from dssim.power import GovernorConfig, Opp, pe_power_uw
from dssim.sched import StaticTable, build_scheduler, fastest_type
from dssim.workload import ArrivalPlan, Distribution, generate_arrivals

_LOG = logging.getLogger("dssim.report")

ISO_FMT = "%Y-%m-%dT%H-%M-%SZ"
NS_PER_MS = 1_000_000
FJ_PER_MJ = 1_000_000_000_000

TRACE_COLUMNS = ["job_id", "task", "pe_type", "pe_index", "t_ready_us", "t_start_us", "t_finish_us", "freq_mhz"]
FREQ_COLUMNS = ["time_us", "domain", "freq_mhz"]
GANTT_COLUMNS = ["lane", "job_id", "task", "start_us", "end_us"]
SWEEP_COLUMNS = ["rate", "scheduler", "avg_exec_time_us", "throughput", "energy_mj"]


class OutputError(OSError):
    def __init__(self, path: Path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime(ISO_FMT)


@dataclass
class SimReport:
    scheduler: str
    jobs_injected: int
    jobs_completed: int
    in_flight: int
    avg_job_exec_time_us: float | None
    throughput_jobs_per_ms: float
    end_time_ns: int
    per_pe_utilization: dict[str, float]
    energy_fj: dict[str, int]
    peak_temperature_k: dict[str, float]
    power_model: str
    warmup_cut_ns: int = 0
    trace: list[TraceRecord] = field(default_factory=list)
    freq_trace: list[FreqChange] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)

    @property
    def elapsed_us(self) -> float:
        return ns_to_us(self.end_time_ns)

    @property
    def energy_total_fj(self) -> int:
        return sum(self.energy_fj.values())

    @property
    def energy_total_mj(self) -> float:
        return self.energy_total_fj / FJ_PER_MJ

    @property
    def energy_per_pe_mj(self) -> dict[str, float]:
        return {pe: value / FJ_PER_MJ for pe, value in self.energy_fj.items()}

    def summary(self) -> dict[str, Any]:
        return {
            "scheduler": self.scheduler,
            "jobs_injected": self.jobs_injected,
            "jobs_completed": self.jobs_completed,
            "in_flight": self.in_flight,
            "avg_job_exec_time_us": self.avg_job_exec_time_us,
            "throughput_jobs_per_ms": self.throughput_jobs_per_ms,
            "elapsed_us": self.elapsed_us,
            "warmup_cut_us": ns_to_us(self.warmup_cut_ns),
            "energy_total_mj": self.energy_total_mj,
            "energy_per_pe_mj": self.energy_per_pe_mj,
            "per_pe_utilization": self.per_pe_utilization,
            "peak_temperature_k": self.peak_temperature_k,
            "power_model": self.power_model,
        }


@dataclass(frozen=True)
class SweepRow:
    rate: float
    scheduler: str
    avg_exec_time_us: float | None
    throughput: float
    energy_mj: float


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def row(self, scheduler: str, rate: float) -> SweepRow:
        for row in self.rows:
            if row.scheduler == scheduler and row.rate == rate:
                return row
        raise KeyError((scheduler, rate))


def summarize(state: SimState, scheduler: str = "") -> SimReport:
    elapsed = state.end_time
    cut = int(state.options.warmup_fraction * state.horizon)
    completed = [job for job in state.jobs.values() if job.done]
    measured = [job.makespan for job in completed if job.t_arrive >= cut]
    if completed and not measured:
        # a cut that would hide every completed job is dropped
        cut = 0
        measured = [job.makespan for job in completed]
    avg = ns_to_us(sum(measured)) / len(measured) if measured else None
    throughput = len(completed) * NS_PER_MS / elapsed if elapsed > 0 else 0.0
    utilization = {str(pe.ref): (pe.busy_ns / elapsed if elapsed > 0 else 0.0) for pe in state.pes}
    return SimReport(
        scheduler=scheduler,
        jobs_injected=state.jobs_injected,
        jobs_completed=len(completed),
        in_flight=state.jobs_injected - len(completed),
        avg_job_exec_time_us=avg,
        throughput_jobs_per_ms=throughput,
        end_time_ns=elapsed,
        per_pe_utilization=utilization,
        energy_fj={str(ref): value for ref, value in state.energy_fj.items()},
        peak_temperature_k=dict(state.peak_temperature),
        power_model=state.db.power_model,
        warmup_cut_ns=cut,
        trace=list(state.trace),
        freq_trace=list(state.freq_log),
        events=list(state.event_log),
    )


def bottleneck_rate(app: AppGraph, db: ResourceDb) -> float:
    """Injection rate (jobs/ms) at which the busiest PE type saturates under the MET placement."""
    demand_us: dict[str, float] = defaultdict(float)
    for task in app.tasks:
        pe_type = fastest_type(task, db)
        if pe_type is not None:
            demand_us[pe_type] += task.profile[pe_type]
    rates = [db.pe_type(name).count * 1000 / demand for name, demand in demand_us.items() if demand > 0]
    return min(rates) if rates else float("inf")


# ---------- sweeps ----------


@dataclass(frozen=True)
class _Cell:
    scheduler: str
    rate: float
    seed: int


def _run_cell(
    cell: _Cell,
    db: ResourceDb,
    app: AppGraph,
    arrivals: list[int],
    duration_ns: int,
    table: StaticTable | None,
    governor: GovernorConfig,
    options: RunOptions,
) -> tuple[_Cell, float | None, float, float]:
    scheduler = build_scheduler(cell.scheduler, table)
    try:
        state = simulate(
            db,
            app,
            arrivals,
            scheduler,
            governor,
            options,
            horizon_ns=duration_ns,
        )
    except DeadlockError as exc:
        raise DeadlockError(f"{exc} [cell scheduler={cell.scheduler} rate={cell.rate} seed={cell.seed}]") from exc
    report = summarize(state, scheduler.name)
    return cell, report.avg_job_exec_time_us, report.throughput_jobs_per_ms, report.energy_total_mj


def sweep(
    db: ResourceDb,
    app: AppGraph,
    schedulers: Sequence[str],
    rates: Sequence[float],
    duration_us: float,
    seeds: Sequence[int],
    *,
    table: StaticTable | None = None,
    governor: GovernorConfig | None = None,
    options: RunOptions | None = None,
    distribution: Distribution = Distribution.EXPONENTIAL,
    jobs: int = 1,
) -> SweepResult:
    """Run every (scheduler, rate, seed) cell and mean each (scheduler, rate) over seeds.

    Arrivals are drawn once per (rate, seed) and shared by all schedulers.
    """
    if not seeds:
        raise ValueError("sweep needs at least one seed.")
    governor = governor or GovernorConfig()
    options = options or RunOptions(record_events=False)
    duration_ns = us_to_ns(duration_us)
    arrivals = {
        (rate, seed): generate_arrivals(
            ArrivalPlan(
                app=app,
                distribution=distribution,
                rate_jobs_per_ms=rate,
                duration_us=duration_us,
                seed=seed,
            )
        )
        for rate in rates
        for seed in seeds
    }
    cells = [_Cell(name.lower(), rate, seed) for name in schedulers for rate in rates for seed in seeds]
    _LOG.info("Sweep: %d cell(s) over %d worker(s)", len(cells), jobs)

    def args(cell: _Cell) -> tuple:
        return (cell, db, app, arrivals[(cell.rate, cell.seed)], duration_ns, table, governor, options)

    outcomes: dict[_Cell, tuple[float | None, float, float]] = {}
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_cell, *args(cell)) for cell in cells]
            for future in futures:
                cell, avg, throughput, energy = future.result()
                outcomes[cell] = (avg, throughput, energy)
                _LOG.info("Cell %s rate=%s seed=%s done", cell.scheduler, cell.rate, cell.seed)
    else:
        for cell in cells:
            _, avg, throughput, energy = _run_cell(*args(cell))
            outcomes[cell] = (avg, throughput, energy)
            _LOG.info("Cell %s rate=%s seed=%s done", cell.scheduler, cell.rate, cell.seed)

    rows: list[SweepRow] = []
    for name in dict.fromkeys(cell.scheduler for cell in cells):
        for rate in rates:
            per_seed = [outcomes[_Cell(name, rate, seed)] for seed in seeds]
            present = [avg for avg, _, _ in per_seed if avg is not None]
            rows.append(
                SweepRow(
                    rate=rate,
                    scheduler=name,
                    avg_exec_time_us=sum(present) / len(present) if present else None,
                    throughput=sum(item[1] for item in per_seed) / len(per_seed),
                    energy_mj=sum(item[2] for item in per_seed) / len(per_seed),
                )
            )
    rows.sort(key=lambda row: (row.scheduler, row.rate))
    return SweepResult(rows=rows)


# ---------- writing ----------


def _us(value_ns: int) -> float:
    return ns_to_us(value_ns)


def _write_csv(path: Path, columns: list[str], rows: Iterable[Iterable[Any]]) -> None:
    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            writer.writerows(rows)
    except OSError as exc:
        raise OutputError(path, exc.strerror or str(exc)) from exc


def _write_json_atomic(path: Path, payload: dict[str, Any]) -> None:
    tmp = path.with_suffix(".tmp")
    try:
        tmp.write_text(json.dumps(payload, ensure_ascii=True, indent=2), encoding="utf-8")
        tmp.replace(path)
    except OSError as exc:
        raise OutputError(path, exc.strerror or str(exc)) from exc


def write_trace_csv(trace: Sequence[TraceRecord], path: Path) -> None:
    _write_csv(
        path,
        TRACE_COLUMNS,
        (
            [
                rec.job_id,
                rec.task,
                rec.pe_type,
                rec.pe_index,
                _us(rec.t_ready),
                _us(rec.t_start),
                _us(rec.t_finish),
                rec.freq_mhz,
            ]
            for rec in trace
        ),
    )


def write_gantt_csv(trace: Sequence[TraceRecord], path: Path) -> None:
    bars = sorted(trace, key=lambda rec: (rec.pe_type, rec.pe_index, rec.t_start, rec.job_id))
    _write_csv(
        path,
        GANTT_COLUMNS,
        ([str(rec.pe), rec.job_id, rec.task, _us(rec.t_start), _us(rec.t_finish)] for rec in bars),
    )


def write_sweep_csv(result: SweepResult, path: Path) -> None:
    _write_csv(
        path,
        SWEEP_COLUMNS,
        (
            [
                row.rate,
                row.scheduler,
                "" if row.avg_exec_time_us is None else row.avg_exec_time_us,
                row.throughput,
                row.energy_mj,
            ]
            for row in result.rows
        ),
    )


def write_outputs(result: SimReport | SweepResult, out_dir: Path) -> list[Path]:
    """Write the report files for a run or a sweep into ``out_dir`` and return their paths."""
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(out_dir, exc.strerror or str(exc)) from exc
    if isinstance(result, SweepResult):
        sweep_path = out_dir / "sweep.csv"
        write_sweep_csv(result, sweep_path)
        return [sweep_path]

    paths = {
        "trace": out_dir / "trace.csv",
        "freq": out_dir / "freq_trace.csv",
        "gantt": out_dir / "gantt.csv",
        "events": out_dir / "events.ndjson",
        "summary": out_dir / "summary.json",
    }
    write_trace_csv(result.trace, paths["trace"])
    _write_csv(
        paths["freq"],
        FREQ_COLUMNS,
        ([_us(change.time), change.domain, change.freq_mhz] for change in result.freq_trace),
    )
    write_gantt_csv(result.trace, paths["gantt"])
    try:
        with paths["events"].open("w", encoding="utf-8") as handle:
            for record in result.events:
                line = {
                    "seq": record.seq,
                    "time_us": _us(record.time),
                    "class": record.kind,
                    "detail": record.detail,
                }
                handle.write(json.dumps(line, ensure_ascii=True) + "\n")
    except OSError as exc:
        raise OutputError(paths["events"], exc.strerror or str(exc)) from exc
    manifest = {"created_at": _utcnow(), **result.summary()}
    _write_json_atomic(paths["summary"], manifest)
    return list(paths.values())


# ---------- reading ----------


def _read_rows(path: Path) -> list[dict[str, str]]:
    try:
        with path.open("r", encoding="utf-8", newline="") as handle:
            return list(csv.DictReader(handle))
    except OSError as exc:
        raise OutputError(path, exc.strerror or str(exc)) from exc


def read_trace_csv(path: Path) -> list[TraceRecord]:
    return [
        TraceRecord(
            job_id=int(row["job_id"]),
            task=row["task"],
            pe_type=row["pe_type"],
            pe_index=int(row["pe_index"]),
            t_ready=us_to_ns(float(row["t_ready_us"])),
            t_start=us_to_ns(float(row["t_start_us"])),
            t_finish=us_to_ns(float(row["t_finish_us"])),
            freq_mhz=float(row["freq_mhz"]),
        )
        for row in _read_rows(path)
    ]


def read_freq_trace(path: Path) -> list[FreqChange]:
    return [
        FreqChange(time=us_to_ns(float(row["time_us"])), domain=row["domain"], freq_mhz=float(row["freq_mhz"]))
        for row in _read_rows(path)
    ]


def read_sweep_csv(path: Path) -> SweepResult:
    rows = [
        SweepRow(
            rate=float(row["rate"]),
            scheduler=row["scheduler"],
            avg_exec_time_us=float(row["avg_exec_time_us"]) if row["avg_exec_time_us"] else None,
            throughput=float(row["throughput"]),
            energy_mj=float(row["energy_mj"]),
        )
        for row in _read_rows(path)
    ]
    return SweepResult(rows=rows)


def reintegrate_energy(
    trace: Sequence[TraceRecord],
    freq_trace: Sequence[FreqChange],
    db: ResourceDb,
    end_time_ns: int,
) -> dict[str, int]:
    """Per-PE energy in fJ rebuilt from task intervals and OPP changes alone.

    Matches the kernel's accumulators for runs that drain their event queue.
    """
    busy: dict[PeRef, list[tuple[int, int]]] = defaultdict(list)
    for rec in trace:
        busy[rec.pe].append((rec.t_start, rec.t_finish))
    changes: dict[str, list[tuple[int, Opp]]] = defaultdict(list)
    for change in sorted(freq_trace, key=lambda item: item.time):
        opps = {opp.freq_mhz: opp for opp in db.opp_tables[change.domain]}
        changes[change.domain].append((change.time, opps[change.freq_mhz]))

    energy: dict[str, int] = {}
    for ref in db.pe_refs():
        domain = db.pe_type(ref.pe_type).freq_domain
        timeline = changes[domain]
        intervals = sorted(busy.get(ref, []))
        cuts = {0, end_time_ns}
        cuts.update(time for time, _ in timeline if time < end_time_ns)
        for start, finish in intervals:
            cuts.update((min(start, end_time_ns), min(finish, end_time_ns)))
        points = sorted(cuts)
        change_times = [time for time, _ in timeline]
        total = 0
        cursor = 0
        for left, right in zip(points, points[1:]):
            opp = timeline[max(0, bisect.bisect_right(change_times, left) - 1)][1]
            while cursor < len(intervals) and intervals[cursor][1] <= left:
                cursor += 1
            executing = cursor < len(intervals) and intervals[cursor][0] <= left
            total += pe_power_uw(executing, opp) * (right - left)
        energy[str(ref)] = total
    return energy
