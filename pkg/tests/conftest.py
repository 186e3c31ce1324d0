from __future__ import annotations

import pytest

from dssim.kernel import RunOptions, SimState, simulate
from dssim.loaders import builtin_big_little_soc
from dssim.model import AppGraph, Edge, PeKind, PeType, ResourceDb, TaskDef
from dssim.power import GovernorConfig, Opp
from dssim.workload import TaskState, builtin_wifi_tx, instantiate_job

SINGLE_JOB = RunOptions(warmup_fraction=0.0)


@pytest.fixture
def soc() -> ResourceDb:
    return builtin_big_little_soc()


@pytest.fixture
def wifi() -> AppGraph:
    return builtin_wifi_tx()


def make_app(name: str, profiles: dict[str, dict[str, float]], edges: list[tuple[str, str]] = (), volume: float = 0.0):
    tasks = [TaskDef(name=task, profile=profile) for task, profile in profiles.items()]
    return AppGraph(
        name=name,
        tasks=tasks,
        edges=[Edge(src=src, dst=dst, volume_bytes=volume) for src, dst in edges],
    )


def make_soc(counts: dict[str, int], static_mw: float = 10.0, dyn_mw: float = 100.0) -> ResourceDb:
    """One general-purpose type per entry, each in its own single-OPP domain."""
    return ResourceDb(
        pe_types=[
            PeType(name=name, kind=PeKind.GENERAL_PURPOSE, count=count, freq_domain=f"d_{name}")
            for name, count in counts.items()
        ],
        opp_tables={
            f"d_{name}": [Opp(freq_mhz=1000, voltage_v=1.0, dyn_power_mw=dyn_mw, static_power_mw=static_mw)]
            for name in counts
        },
    )


def single_job(db: ResourceDb, app: AppGraph, scheduler, governor: GovernorConfig | None = None, at: int = 0):
    return simulate(db, app, [at], scheduler, governor or GovernorConfig(), SINGLE_JOB)


def ready_state(db: ResourceDb, app: AppGraph, ready: dict[int, list[str]]) -> SimState:
    """State with the given (job_id -> task names) instantiated and marked ready."""
    state = SimState.create(db, app, GovernorConfig())
    for job_id, names in ready.items():
        job = instantiate_job(app, job_id, 0)
        for task in job.tasks.values():
            task.state = TaskState.BLOCKED
        for name in names:
            job.tasks[name].state = TaskState.READY
            job.tasks[name].t_ready = 0
            state.ready_list.append(job.tasks[name])
        state.jobs[job_id] = job
    return state
