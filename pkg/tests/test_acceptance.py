from __future__ import annotations

import numpy as np
import pytest

from dssim.loaders import builtin_big_little_soc
from dssim.model import AppGraph, CommParams
from dssim.oracle import optimal_single_job, verify_table
from dssim.report import sweep
from dssim.sched import EtfScheduler, MetScheduler
from dssim.workload import builtin_wifi_tx

from conftest import make_app, make_soc, single_job

LOW_RATE = 5.0
HIGH_RATE = 240.0
TYPES = ("P0", "P1", "P2")


@pytest.fixture(scope="module")
def wifi_sweep():
    soc = builtin_big_little_soc()
    wifi = builtin_wifi_tx()
    table = optimal_single_job(wifi, soc).table
    return sweep(
        soc,
        wifi,
        ["met", "etf", "table"],
        [LOW_RATE, HIGH_RATE],
        duration_us=8000,
        seeds=[1, 2, 3, 4, 5],
        table=table,
    )


def test_single_job_optimum_is_sum_of_fastest_latencies():
    soc = builtin_big_little_soc()
    wifi = builtin_wifi_tx()
    result = optimal_single_job(wifi, soc)
    assert result.makespan == 42_000
    assert single_job(soc, wifi, EtfScheduler()).jobs[0].makespan == 42_000
    assert verify_table(result, wifi, soc)


def test_schedulers_agree_at_low_load(wifi_sweep):
    averages = [wifi_sweep.row(name, LOW_RATE).avg_exec_time_us for name in ("met", "etf", "table")]
    assert all(avg is not None for avg in averages)
    assert max(averages) <= 1.05 * min(averages)
    assert min(averages) >= 42.0


def test_etf_copes_best_past_the_accelerator_knee(wifi_sweep):
    etf = wifi_sweep.row("etf", HIGH_RATE).avg_exec_time_us
    assert etf <= wifi_sweep.row("met", HIGH_RATE).avg_exec_time_us
    assert etf <= wifi_sweep.row("table", HIGH_RATE).avg_exec_time_us
    assert wifi_sweep.row("met", HIGH_RATE).avg_exec_time_us > 2 * 42.0


def test_latency_grows_with_load(wifi_sweep):
    for name in ("met", "etf", "table"):
        assert wifi_sweep.row(name, HIGH_RATE).avg_exec_time_us > wifi_sweep.row(name, LOW_RATE).avg_exec_time_us


def _random_case(rng: np.random.Generator, chain: bool, comm: bool = True):
    counts = {name: int(rng.integers(1, 3)) for name in TYPES}
    n_tasks = int(rng.integers(1, 7))
    profiles = {}
    for i in range(n_tasks):
        supported = [name for name in TYPES if rng.random() < 0.5] or [TYPES[int(rng.integers(0, 3))]]
        profiles[f"T{i}"] = {name: float(rng.integers(1, 21)) for name in supported}
    if chain:
        edges = [(f"T{i}", f"T{i + 1}") for i in range(n_tasks - 1)]
        app = make_app("chain", profiles, edges)
        return make_soc(counts), app
    edges = [(f"T{i}", f"T{j}") for i in range(n_tasks) for j in range(i + 1, n_tasks) if rng.random() < 0.4]
    if not comm:
        return make_soc(counts), make_app("dag", profiles, edges)
    app = make_app("dag", profiles, edges, volume=float(rng.integers(0, 2001)))
    return make_soc(counts).with_comm(CommParams(latency_us=float(rng.integers(0, 3)))), app


def _reordered(app: AppGraph, rng: np.random.Generator) -> AppGraph:
    tasks = [app.tasks[i] for i in rng.permutation(len(app.tasks))]
    return AppGraph(name=app.name, tasks=tasks, edges=app.edges)


def test_oracle_never_loses_to_met_on_random_dags():
    rng = np.random.default_rng(17)
    for _ in range(200):
        db, app = _random_case(rng, chain=False)
        result = optimal_single_job(app, db)
        met = single_job(db, app, MetScheduler()).jobs[0].makespan
        assert result.makespan <= met
        assert verify_table(result, app, db)
        reordered = _reordered(app, rng)
        assert optimal_single_job(reordered, db).makespan == result.makespan
        assert verify_table(result, reordered, db)


def test_oracle_never_loses_to_etf_without_transfer_cost():
    rng = np.random.default_rng(23)
    for _ in range(200):
        db, app = _random_case(rng, chain=False, comm=False)
        oracle = optimal_single_job(app, db).makespan
        assert oracle <= single_job(db, app, EtfScheduler()).jobs[0].makespan
        assert oracle <= single_job(db, app, MetScheduler()).jobs[0].makespan
        assert optimal_single_job(_reordered(app, rng), db).makespan == oracle


def test_oracle_etf_met_ordering_on_random_chains():
    rng = np.random.default_rng(29)
    for _ in range(100):
        db, app = _random_case(rng, chain=True)
        oracle = optimal_single_job(app, db).makespan
        etf = single_job(db, app, EtfScheduler()).jobs[0].makespan
        met = single_job(db, app, MetScheduler()).jobs[0].makespan
        assert oracle <= etf <= met
