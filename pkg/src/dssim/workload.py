"""Job generator: built-in applications, arrival processes and job instantiation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from dssim.model import AppGraph, Edge, PeRef, TaskDef, us_to_ns

_LOG = logging.getLogger("dssim.workload")

NS_PER_MS = 1_000_000
_DRAW_BLOCK = 1024

WIFI_TX_TASKS = (
    "Scrambler-Encoder",
    "Interleaver",
    "QPSK-Modulation",
    "Pilot-Insertion",
    "Inverse-FFT",
    "CRC",
)


class Distribution(str, Enum):
    EXPONENTIAL = "exponential"
    DETERMINISTIC = "deterministic"


class TaskState(str, Enum):
    BLOCKED = "blocked"
    READY = "ready"
    RUNNING = "running"
    FINISHED = "finished"


class ArrivalPlan(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    app: AppGraph
    distribution: Distribution = Distribution.EXPONENTIAL
    rate_jobs_per_ms: float = Field(gt=0)
    duration_us: float = Field(gt=0)
    seed: int = 0

    @property
    def duration_ns(self) -> int:
        return us_to_ns(self.duration_us)


@dataclass(eq=False)
class TaskInstance:
    task: TaskDef
    job_id: int
    state: TaskState = TaskState.BLOCKED
    assigned_pe: PeRef | None = None
    t_ready: int | None = None
    t_start: int | None = None
    t_finish: int | None = None
    freq_mhz: float | None = None

    @property
    def name(self) -> str:
        return self.task.name

    def __repr__(self) -> str:
        return f"TaskInstance({self.job_id}:{self.task.name}, {self.state.value})"


@dataclass(eq=False)
class JobInstance:
    job_id: int
    app: AppGraph
    t_arrive: int
    t_complete: int | None = None
    tasks: dict[str, TaskInstance] = field(default_factory=dict)

    @property
    def done(self) -> bool:
        return self.t_complete is not None

    @property
    def makespan(self) -> int | None:
        if self.t_complete is None:
            return None
        return self.t_complete - self.t_arrive


def builtin_wifi_tx(edge_volume_bytes: float = 0.0) -> AppGraph:
    """WiFi transmitter chain with latencies in us profiled on Odroid-XU3 cores and accelerators."""
    profiles = {
        "Scrambler-Encoder": {"SCRAMBLER_ACC": 8, "A7": 22, "A15": 10},
        "Interleaver": {"A7": 10, "A15": 4},
        "QPSK-Modulation": {"A7": 15, "A15": 8},
        "Pilot-Insertion": {"A7": 5, "A15": 3},
        "Inverse-FFT": {"FFT_ACC": 16, "A7": 296, "A15": 118},
        "CRC": {"A7": 5, "A15": 3},
    }
    tasks = [TaskDef(name=name, profile=profiles[name]) for name in WIFI_TX_TASKS]
    edges = [
        Edge(src=src, dst=dst, volume_bytes=edge_volume_bytes)
        for src, dst in zip(WIFI_TX_TASKS, WIFI_TX_TASKS[1:])
    ]
    return AppGraph(name="wifi_tx", tasks=tasks, edges=edges)


def generate_arrivals(plan: ArrivalPlan) -> list[int]:
    """Arrival times in ns, strictly increasing, inside ``[0, duration)``."""
    duration = plan.duration_ns
    gap_ns = NS_PER_MS / plan.rate_jobs_per_ms
    if plan.distribution is Distribution.DETERMINISTIC:
        times: list[int] = []
        k = 0
        while True:
            stamp = round(k * gap_ns)
            if times and stamp <= times[-1]:
                stamp = times[-1] + 1
            if stamp >= duration:
                return times
            times.append(stamp)
            k += 1
    times = _exponential_arrivals(gap_ns, duration, plan.seed)
    _LOG.debug(
        "Generated %d exponential arrivals (rate=%s jobs/ms, seed=%s)",
        len(times),
        plan.rate_jobs_per_ms,
        plan.seed,
    )
    return times


def _exponential_arrivals(mean_gap_ns: float, duration: int, seed: int) -> list[int]:
    rng = np.random.default_rng(seed)
    times: list[int] = []
    clock = 0.0
    last = -1
    while True:
        for gap in rng.exponential(mean_gap_ns, size=_DRAW_BLOCK):
            clock += float(gap)
            stamp = max(last + 1, round(clock))
            if stamp >= duration:
                return times
            times.append(stamp)
            last = stamp


def instantiate_job(app: AppGraph, job_id: int, t_arrive: int) -> JobInstance:
    job = JobInstance(job_id=job_id, app=app, t_arrive=t_arrive)
    for task in app.tasks:
        instance = TaskInstance(task=task, job_id=job_id)
        if not app.predecessors(task.name):
            instance.state = TaskState.READY
            instance.t_ready = t_arrive
        job.tasks[task.name] = instance
    return job
