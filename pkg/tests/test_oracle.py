from __future__ import annotations

import dataclasses

import pytest

from dssim.model import AppGraph, CommParams
from dssim.oracle import (
    MAX_ORACLE_TASKS,
    OracleTooLargeError,
    UnschedulableError,
    optimal_single_job,
    single_job_makespan,
    verify_table,
)
from dssim.sched import TableMode, TableScheduler

from conftest import make_app, make_soc, single_job


def test_wifi_oracle_matches_best_placement(soc, wifi):
    result = optimal_single_job(wifi, soc)
    assert result.makespan == 42_000
    assert result.makespan_us == 42.0
    assert result.explored == 144
    assert result.table.mode is TableMode.TYPE_RR
    assert result.table.entries == {
        "Scrambler-Encoder": "SCRAMBLER_ACC",
        "Interleaver": "A15",
        "QPSK-Modulation": "A15",
        "Pilot-Insertion": "A15",
        "Inverse-FFT": "FFT_ACC",
        "CRC": "A15",
    }
    assert verify_table(result, wifi, soc)


def test_single_task_picks_fastest_type(soc):
    app = make_app("one", {"T": {"A15": 5, "A7": 7}})
    result = optimal_single_job(app, soc)
    assert result.makespan == 5000
    assert result.table.entries == {"T": "A15"}


def test_independent_tasks_share_a_single_instance():
    db = make_soc({"CPU": 1})
    app = make_app("pair", {"A": {"CPU": 3}, "B": {"CPU": 4}})
    assert optimal_single_job(app, db).makespan == 7000


def test_oracle_rejects_large_applications(soc):
    app = make_app("big", {f"T{i}": {"A15": 1} for i in range(MAX_ORACLE_TASKS + 1)})
    with pytest.raises(OracleTooLargeError, match="13 tasks"):
        optimal_single_job(app, soc)


def test_oracle_rejects_unschedulable_task(soc):
    with pytest.raises(UnschedulableError, match="Shade"):
        optimal_single_job(make_app("gpu", {"Shade": {"GPU": 5}}), soc)


def test_verify_table_detects_a_worse_table(soc, wifi):
    result = optimal_single_job(wifi, soc)
    entries = dict(result.table.entries, Interleaver="A7")
    altered = dataclasses.replace(result, table=result.table.model_copy(update={"entries": entries}))
    assert not verify_table(altered, wifi, soc)
    assert single_job_makespan(altered.table, wifi, soc) > result.makespan


def test_task_order_does_not_change_the_optimum(soc, wifi):
    reordered = AppGraph(name=wifi.name, tasks=list(reversed(wifi.tasks)), edges=wifi.edges)
    assert optimal_single_job(reordered, soc).makespan == optimal_single_job(wifi, soc).makespan


def test_comm_override_lengthens_makespan(soc, wifi):
    slow = optimal_single_job(wifi, soc, CommParams(latency_us=1))
    assert slow.makespan > 42_000


def _two_branch_app(tasks: list[str]) -> AppGraph:
    profiles = {
        "T0": {"P0": 19},
        "T1": {"P0": 16},
        "T2": {"P1": 20},
        "T3": {"P0": 4, "P1": 20, "P2": 20},
    }
    return make_app("branches", {name: profiles[name] for name in tasks}, [("T1", "T2")])


def test_task_order_does_not_change_the_optimum_on_a_dag():
    db = make_soc({"P0": 1, "P1": 2, "P2": 1})
    listed = _two_branch_app(["T0", "T1", "T2", "T3"])
    shuffled = _two_branch_app(["T1", "T2", "T0", "T3"])
    first = optimal_single_job(listed, db)
    second = optimal_single_job(shuffled, db)
    assert first.makespan == second.makespan == 36_000
    assert first.table.entries == {"T0": "P0", "T1": "P0", "T2": "P1", "T3": "P1"}
    assert first.table.priority == ["T1", "T3", "T0", "T2"]
    assert verify_table(first, listed, db)
    assert verify_table(second, shuffled, db)
    assert verify_table(first, shuffled, db)


def test_oracle_keeps_successor_on_its_producer_instance():
    db = make_soc({"CPU": 2}).with_comm(CommParams(latency_us=3))
    profiles = {"A": {"CPU": 5}, "B": {"CPU": 5}, "C": {"CPU": 5}}
    for order in (["A", "B", "C"], ["B", "A", "C"]):
        app = make_app("fork", {name: profiles[name] for name in order}, [("A", "C")])
        result = optimal_single_job(app, db)
        assert result.makespan == 10_000
        assert verify_table(result, app, db)
        trace = {rec.task: rec for rec in single_job(db, app, TableScheduler(result.table)).trace}
        assert trace["C"].pe == trace["A"].pe
