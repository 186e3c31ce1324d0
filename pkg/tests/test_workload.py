from __future__ import annotations

import math

import numpy as np
import pytest
from pydantic import ValidationError

from dssim.workload import (
    WIFI_TX_TASKS,
    ArrivalPlan,
    Distribution,
    TaskState,
    generate_arrivals,
    instantiate_job,
)


def test_deterministic_arrivals_start_at_zero(wifi):
    plan = ArrivalPlan(app=wifi, distribution=Distribution.DETERMINISTIC, rate_jobs_per_ms=5, duration_us=1000)
    assert generate_arrivals(plan) == [0, 200_000, 400_000, 600_000, 800_000]


def test_exponential_arrivals_match_rate(wifi):
    plan = ArrivalPlan(app=wifi, rate_jobs_per_ms=5, duration_us=1_000_000, seed=7)
    arrivals = generate_arrivals(plan)
    expected = 5 * 1000
    assert abs(len(arrivals) - expected) <= 4 * math.sqrt(expected)
    gaps = np.diff(arrivals)
    mean_gap_us = float(gaps.mean()) / 1000
    standard_error = 200 / math.sqrt(len(gaps))
    assert abs(mean_gap_us - 200) <= 3 * standard_error


def test_exponential_arrivals_are_strictly_increasing_and_in_window(wifi):
    plan = ArrivalPlan(app=wifi, rate_jobs_per_ms=500, duration_us=2000, seed=3)
    arrivals = generate_arrivals(plan)
    assert all(b > a for a, b in zip(arrivals, arrivals[1:]))
    assert arrivals[0] >= 0
    assert arrivals[-1] < plan.duration_ns


def test_arrivals_are_reproducible_per_seed(wifi):
    plan = ArrivalPlan(app=wifi, rate_jobs_per_ms=20, duration_us=50_000, seed=11)
    assert generate_arrivals(plan) == generate_arrivals(plan)
    other = plan.model_copy(update={"seed": 12})
    assert generate_arrivals(plan) != generate_arrivals(other)


def test_arrival_plan_rejects_non_positive_rate(wifi):
    with pytest.raises(ValidationError):
        ArrivalPlan(app=wifi, rate_jobs_per_ms=0, duration_us=1000)


def test_instantiate_job_marks_sources_ready(wifi):
    job = instantiate_job(wifi, 3, 5000)
    assert list(job.tasks) == list(WIFI_TX_TASKS)
    scrambler = job.tasks["Scrambler-Encoder"]
    assert scrambler.state is TaskState.READY
    assert scrambler.t_ready == 5000
    assert all(task.state is TaskState.BLOCKED for name, task in job.tasks.items() if name != "Scrambler-Encoder")
    assert not job.done
    assert job.makespan is None


def test_task_instances_compare_by_identity(wifi):
    first = instantiate_job(wifi, 0, 0)
    second = instantiate_job(wifi, 0, 0)
    assert first.tasks["CRC"] != second.tasks["CRC"]
