from __future__ import annotations

import json
from pathlib import Path

import pytest

from dssim.kernel import RunOptions, run, simulate
from dssim.power import GovernorConfig, GovernorPolicy
from dssim.report import (
    FJ_PER_MJ,
    OutputError,
    SweepResult,
    SweepRow,
    bottleneck_rate,
    read_freq_trace,
    read_sweep_csv,
    read_trace_csv,
    reintegrate_energy,
    summarize,
    sweep,
    write_outputs,
    write_sweep_csv,
)
from dssim.sched import EtfScheduler, MetScheduler
from dssim.workload import ArrivalPlan

from conftest import make_app


def _ondemand_report(soc, wifi):
    arrivals = list(range(0, 3_000_000, 25_000)) + [3_000_100, 3_000_200, 3_000_300]
    governor = GovernorConfig(policy=GovernorPolicy.ONDEMAND, period_us=50)
    state = simulate(soc, wifi, arrivals, EtfScheduler(), governor, RunOptions(), horizon_ns=3_500_000)
    return summarize(state, "etf")


def test_energy_reintegrates_from_traces(soc, wifi):
    report = _ondemand_report(soc, wifi)
    assert len(report.freq_trace) > len(soc.domains())
    rebuilt = reintegrate_energy(report.trace, report.freq_trace, soc, report.end_time_ns)
    assert rebuilt == report.energy_fj


def test_energy_reintegrates_from_written_files(soc, wifi, tmp_path: Path):
    report = _ondemand_report(soc, wifi)
    write_outputs(report, tmp_path)
    trace = read_trace_csv(tmp_path / "trace.csv")
    freq_trace = read_freq_trace(tmp_path / "freq_trace.csv")
    assert trace == report.trace
    assert reintegrate_energy(trace, freq_trace, soc, report.end_time_ns) == report.energy_fj


def test_idle_energy_is_static_power_times_duration(soc):
    state = simulate(soc, make_app("noop", {"A": {"A7": 1}}), [], MetScheduler(), horizon_ns=2_000_000)
    report = summarize(state)
    for pe_type in soc.pe_types:
        static_uw = soc.opp_tables[pe_type.freq_domain][-1].static_power_uw
        for index in range(pe_type.count):
            assert report.energy_fj[f"{pe_type.name}:{index}"] == static_uw * 2_000_000
    assert report.energy_total_mj == pytest.approx(1.66)


def test_throughput_matches_injection_rate(soc, wifi):
    plan = ArrivalPlan(app=wifi, rate_jobs_per_ms=20, duration_us=20_000, seed=5)
    report = run(soc, plan, EtfScheduler())
    assert report.jobs_completed == report.jobs_injected
    realized = report.jobs_injected / 20.0
    assert report.throughput_jobs_per_ms == pytest.approx(realized, rel=0.02)
    assert report.avg_job_exec_time_us is not None
    assert report.avg_job_exec_time_us >= 42.0


def test_warmup_jobs_are_excluded_from_average(soc, wifi):
    arrivals = [0, 100_000, 900_000]
    state = simulate(soc, wifi, arrivals, EtfScheduler(), options=RunOptions(warmup_fraction=0.5), horizon_ns=1_000_000)
    report = summarize(state, "etf")
    assert report.warmup_cut_ns == 500_000
    assert report.jobs_completed == 3
    assert report.avg_job_exec_time_us == pytest.approx(42.0)


def test_warmup_is_dropped_when_it_would_hide_every_job(soc, wifi):
    state = simulate(soc, wifi, [0], EtfScheduler(), options=RunOptions(), horizon_ns=1_000_000)
    report = summarize(state, "etf")
    assert report.warmup_cut_ns == 0
    assert report.jobs_completed == 1
    assert report.avg_job_exec_time_us == pytest.approx(42.0)


def test_bottleneck_rate_for_wifi(soc, wifi):
    assert bottleneck_rate(wifi, soc) == pytest.approx(4000 / 18)


def test_write_outputs_for_a_run(soc, wifi, tmp_path: Path):
    report = _ondemand_report(soc, wifi)
    paths = write_outputs(report, tmp_path / "out")
    assert [path.name for path in paths] == [
        "trace.csv",
        "freq_trace.csv",
        "gantt.csv",
        "events.ndjson",
        "summary.json",
    ]
    summary = json.loads((tmp_path / "out" / "summary.json").read_text(encoding="utf-8"))
    assert summary["jobs_injected"] == report.jobs_injected
    assert summary["energy_total_mj"] == pytest.approx(report.energy_total_fj / FJ_PER_MJ)
    assert summary["power_model"] == "synthetic"
    assert "created_at" in summary
    events = (tmp_path / "out" / "events.ndjson").read_text(encoding="utf-8").splitlines()
    first = json.loads(events[0])
    assert first["class"] == "job_arrival"
    assert {"seq", "time_us", "detail"} <= set(first)
    gantt = (tmp_path / "out" / "gantt.csv").read_text(encoding="utf-8").splitlines()
    assert gantt[0] == "lane,job_id,task,start_us,end_us"
    assert len(gantt) == len(report.trace) + 1


def test_empty_run_writes_header_only_files(soc, wifi, tmp_path: Path):
    state = simulate(soc, wifi, [], EtfScheduler())
    report = summarize(state, "etf")
    assert report.avg_job_exec_time_us is None
    assert report.throughput_jobs_per_ms == 0.0
    write_outputs(report, tmp_path)
    assert (tmp_path / "trace.csv").read_text(encoding="utf-8") == (
        "job_id,task,pe_type,pe_index,t_ready_us,t_start_us,t_finish_us,freq_mhz\n"
    )
    assert (tmp_path / "events.ndjson").read_text(encoding="utf-8") == ""


def test_write_outputs_reports_unwritable_directory(soc, wifi, tmp_path: Path):
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    report = summarize(simulate(soc, wifi, [], EtfScheduler()))
    with pytest.raises(OutputError) as excinfo:
        write_outputs(report, blocker / "out")
    assert excinfo.value.path == blocker / "out"


def test_sweep_csv_roundtrip(tmp_path: Path):
    result = SweepResult(
        rows=[
            SweepRow(rate=5.0, scheduler="etf", avg_exec_time_us=42.5, throughput=4.9, energy_mj=1.25),
            SweepRow(rate=10.0, scheduler="etf", avg_exec_time_us=None, throughput=0.0, energy_mj=0.5),
        ]
    )
    path = tmp_path / "sweep.csv"
    write_sweep_csv(result, path)
    assert path.read_text(encoding="utf-8").splitlines()[0] == "rate,scheduler,avg_exec_time_us,throughput,energy_mj"
    assert read_sweep_csv(path) == result


def test_sweep_is_independent_of_worker_count(soc, wifi):
    kwargs = dict(rates=[5.0, 50.0], duration_us=2000, seeds=[1, 2])
    serial = sweep(soc, wifi, ["met", "etf"], jobs=1, **kwargs)
    parallel = sweep(soc, wifi, ["met", "etf"], jobs=2, **kwargs)
    assert serial == parallel
    assert [(row.scheduler, row.rate) for row in serial.rows] == [
        ("etf", 5.0),
        ("etf", 50.0),
        ("met", 5.0),
        ("met", 50.0),
    ]


def test_sweep_requires_seeds(soc, wifi):
    with pytest.raises(ValueError, match="seed"):
        sweep(soc, wifi, ["met"], [5.0], 1000, [])
