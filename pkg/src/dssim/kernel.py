"""Discrete-event simulation kernel.

Events are processed in the total order ``(time, class, seq)``. After every job
arrival or task completion the scheduler is offered the ready list once; its
assignments are validated and dispatched. Between events the kernel integrates
energy, PE busy time and domain temperature over constant-power segments.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING, Any, NamedTuple, Sequence

from dssim.model import (
    AppGraph,
    CommParams,
    PeRef,
    PeType,
    ResourceDb,
    execution_time,
    us_to_ns,
)
from dssim.power import (
    GovernorConfig,
    GovernorPolicy,
    Opp,
    ThermalNode,
    accumulate_energy,
    advance_thermal,
    governor_tick,
    initial_opp_index,
    pe_power_uw,
)
from dssim.workload import (
    ArrivalPlan,
    JobInstance,
    TaskInstance,
    TaskState,
    generate_arrivals,
    instantiate_job,
)

if TYPE_CHECKING:
    from dssim.report import SimReport
    from dssim.sched import Scheduler

__all__ = [
    "Assignment",
    "CommParams",
    "DeadlockError",
    "Event",
    "EventClass",
    "EventRecord",
    "FreqChange",
    "PeInstance",
    "PeStatus",
    "RunOptions",
    "SchedulerContractError",
    "SimState",
    "SimView",
    "TraceRecord",
    "comm_latency",
    "dispatch",
    "ready_successors",
    "run",
    "simulate",
]

_LOG = logging.getLogger("dssim.kernel")


class SchedulerContractError(RuntimeError):
    pass


class DeadlockError(RuntimeError):
    pass


class EventClass(IntEnum):
    JOB_ARRIVAL = 0
    TASK_FINISH = 1
    GOVERNOR_TICK = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True, order=True)
class Event:
    time: int
    kind: EventClass
    seq: int
    payload: Any = field(default=None, compare=False)


class Assignment(NamedTuple):
    task: TaskInstance
    pe: PeRef


@dataclass(frozen=True)
class TraceRecord:
    job_id: int
    task: str
    pe_type: str
    pe_index: int
    t_ready: int
    t_start: int
    t_finish: int
    freq_mhz: float

    @property
    def pe(self) -> PeRef:
        return PeRef(self.pe_type, self.pe_index)


@dataclass(frozen=True)
class FreqChange:
    time: int
    domain: str
    freq_mhz: float


@dataclass(frozen=True)
class EventRecord:
    seq: int
    time: int
    kind: str
    detail: dict[str, Any]


@dataclass(frozen=True)
class PeStatus:
    """Snapshot of one PE as schedulers see it."""

    ref: PeRef
    ordinal: int
    busy: bool
    available_at: int


@dataclass
class PeInstance:
    ref: PeRef
    pe_type: PeType
    ordinal: int
    available_at: int = 0
    busy: bool = False
    current_task: TaskInstance | None = None
    busy_ns: int = 0

    @property
    def domain(self) -> str:
        return self.pe_type.freq_domain

    def executing(self, now: int) -> bool:
        task = self.current_task
        return self.busy and task is not None and task.t_start is not None and task.t_start <= now

    def status(self) -> PeStatus:
        return PeStatus(self.ref, self.ordinal, self.busy, self.available_at)


@dataclass(frozen=True)
class RunOptions:
    max_time_us: float | None = None
    warmup_fraction: float = 0.1
    record_events: bool = True

    @property
    def max_time_ns(self) -> int | None:
        if self.max_time_us is None:
            return None
        return us_to_ns(self.max_time_us)


@dataclass
class SimState:
    db: ResourceDb
    app: AppGraph
    governor: GovernorConfig
    pes: list[PeInstance]
    horizon: int = 0
    clock: int = 0
    end_time: int = 0
    ready_list: list[TaskInstance] = field(default_factory=list)
    jobs: dict[int, JobInstance] = field(default_factory=dict)
    jobs_injected: int = 0
    unfinished_tasks: int = 0
    energy_fj: dict[PeRef, int] = field(default_factory=dict)
    opp_index: dict[str, int] = field(default_factory=dict)
    thermal: dict[str, ThermalNode] = field(default_factory=dict)
    peak_temperature: dict[str, float] = field(default_factory=dict)
    trace: list[TraceRecord] = field(default_factory=list)
    freq_log: list[FreqChange] = field(default_factory=list)
    event_log: list[EventRecord] = field(default_factory=list)
    queue: list[Event] = field(default_factory=list)
    seq: int = 0
    pending_work: int = 0
    domain_busy_ns: dict[str, int] = field(default_factory=dict)
    last_tick: int = 0
    options: RunOptions = field(default_factory=RunOptions)
    pe_map: dict[PeRef, PeInstance] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        db: ResourceDb,
        app: AppGraph,
        governor: GovernorConfig,
        options: RunOptions | None = None,
    ) -> "SimState":
        pes = [
            PeInstance(ref=ref, pe_type=db.pe_type(ref.pe_type), ordinal=i)
            for i, ref in enumerate(db.pe_refs())
        ]
        state = cls(
            db=db,
            app=app,
            governor=governor,
            pes=pes,
            options=options or RunOptions(),
        )
        state.energy_fj = {pe.ref: 0 for pe in pes}
        state.pe_map = {pe.ref: pe for pe in pes}
        for domain in db.domains():
            opps = db.opp_tables[domain]
            index = initial_opp_index(governor, opps)
            state.opp_index[domain] = index
            state.freq_log.append(FreqChange(0, domain, opps[index].freq_mhz))
            params = db.thermal_params(domain)
            state.thermal[domain] = ThermalNode(
                r_k_per_w=params.r_k_per_w,
                c_j_per_k=params.c_j_per_k,
                t_amb_k=params.t_amb_k,
                t_k=params.t_amb_k,
            )
            state.peak_temperature[domain] = params.t_amb_k
            state.domain_busy_ns[domain] = 0
        return state

    def pe(self, ref: PeRef) -> PeInstance:
        try:
            return self.pe_map[ref]
        except KeyError:
            raise KeyError(str(ref)) from None

    def opp(self, domain: str) -> Opp:
        return self.db.opp_tables[domain][self.opp_index[domain]]

    def push(self, time: int, kind: EventClass, payload: Any = None) -> Event:
        self.seq += 1
        event = Event(time, kind, self.seq, payload)
        heapq.heappush(self.queue, event)
        if kind is not EventClass.GOVERNOR_TICK:
            self.pending_work += 1
        return event

    def dvfs_domains(self) -> list[str]:
        domains = []
        for domain in self.db.domains():
            members = [pe for pe in self.pes if pe.domain == domain]
            if len(self.db.opp_tables[domain]) > 1 and not all(pe.pe_type.is_accelerator for pe in members):
                domains.append(domain)
        return domains


class SimView:
    """Read-only window on the simulation state handed to schedulers."""

    def __init__(self, state: SimState):
        self._state = state

    @property
    def db(self) -> ResourceDb:
        return self._state.db

    @property
    def pes(self) -> tuple[PeStatus, ...]:
        return tuple(pe.status() for pe in self._state.pes)

    def idle_pes(self) -> list[PeStatus]:
        return [pe.status() for pe in self._state.pes if not pe.busy]

    def freq(self, domain: str) -> float:
        return self._state.opp(domain).freq_mhz

    def exec_time(self, task: TaskInstance, ref: PeRef) -> int | None:
        """Latency of ``task`` on ``ref`` at the OPP currently in force, or None if unsupported."""
        if not task.task.supports(ref.pe_type):
            return None
        pe_type = self._state.db.pe_type(ref.pe_type)
        domain = pe_type.freq_domain
        return execution_time(task.task, pe_type, self.freq(domain), self._state.db.ref_freq(domain))

    def data_ready_time(self, task: TaskInstance, ref: PeRef) -> int:
        return _data_ready_time(self._state, task, ref)


def comm_latency(volume_bytes: float, src_pe: PeRef | None, dst_pe: PeRef, params: CommParams) -> int:
    """Transfer delay in ns; zero when producer and consumer share an instance."""
    if src_pe is not None and src_pe == dst_pe:
        return 0
    transfer_ns = math.ceil(volume_bytes * 1000 / params.bandwidth_bytes_per_us)
    return us_to_ns(params.latency_us) + transfer_ns


def _data_ready_time(state: SimState, task: TaskInstance, ref: PeRef) -> int:
    ready = state.clock
    job = state.jobs[task.job_id]
    for edge in job.app.predecessors(task.name):
        pred = job.tasks[edge.src]
        if pred.t_finish is None:
            continue
        arrival = pred.t_finish + comm_latency(edge.volume_bytes, pred.assigned_pe, ref, state.db.comm)
        ready = max(ready, arrival)
    return ready


def dispatch(task: TaskInstance, pe: PeInstance, state: SimState) -> Event:
    if task.state is not TaskState.READY:
        raise SchedulerContractError(f"Task {task.job_id}:{task.name} is {task.state.value}, not ready.")
    if pe.busy:
        raise SchedulerContractError(
            f"PE {pe.ref} is busy with {pe.current_task!r} until {pe.available_at} ns."
        )
    if not task.task.supports(pe.ref.pe_type):
        raise SchedulerContractError(f"Task {task.job_id}:{task.name} is not supported on PE {pe.ref}.")
    opp = state.opp(pe.domain)
    duration = execution_time(task.task, pe.pe_type, opp.freq_mhz, state.db.ref_freq(pe.domain))
    task.t_start = _data_ready_time(state, task, pe.ref)
    task.t_finish = task.t_start + duration
    task.assigned_pe = pe.ref
    task.freq_mhz = opp.freq_mhz
    task.state = TaskState.RUNNING
    pe.busy = True
    pe.current_task = task
    pe.available_at = task.t_finish
    return state.push(task.t_finish, EventClass.TASK_FINISH, task)


def ready_successors(finished: TaskInstance, job: JobInstance) -> list[TaskInstance]:
    if finished.state is not TaskState.FINISHED:
        raise ValueError(f"Task {finished.job_id}:{finished.name} has not finished.")
    released: list[TaskInstance] = []
    for name in job.app.successors(finished.name):
        succ = job.tasks[name]
        if succ.state is not TaskState.BLOCKED:
            continue
        if all(job.tasks[edge.src].state is TaskState.FINISHED for edge in job.app.predecessors(name)):
            succ.state = TaskState.READY
            succ.t_ready = finished.t_finish
            released.append(succ)
    if all(task.state is TaskState.FINISHED for task in job.tasks.values()):
        job.t_complete = finished.t_finish
    return released


class Simulator:
    def __init__(
        self,
        state: SimState,
        scheduler: "Scheduler",
    ):
        self.state = state
        self.scheduler = scheduler
        self._dvfs = state.dvfs_domains() if state.governor.policy is GovernorPolicy.ONDEMAND else []

    def run(self, arrivals: Sequence[int]) -> SimState:
        state = self.state
        for job_id, t_arrive in enumerate(arrivals):
            state.push(t_arrive, EventClass.JOB_ARRIVAL, job_id)
        if self._dvfs:
            state.push(state.governor.period_ns, EventClass.GOVERNOR_TICK)
        max_time = state.options.max_time_ns
        stopped = False
        while state.queue:
            event = state.queue[0]
            if max_time is not None and event.time > max_time:
                stopped = True
                break
            heapq.heappop(state.queue)
            self._advance(event.time)
            if event.kind is not EventClass.GOVERNOR_TICK:
                state.pending_work -= 1
            detail, changed = self._handle(event)
            if state.options.record_events:
                state.event_log.append(EventRecord(event.seq, event.time, event.kind.label, detail))
            if changed and state.ready_list:
                self._epoch()
            self._check_deadlock()
        if stopped:
            end = max_time
        else:
            end = max(state.clock, state.horizon)
            if max_time is not None:
                end = min(end, max(max_time, state.clock))
        self._advance(end)
        state.end_time = end
        return state

    def _handle(self, event: Event) -> tuple[dict[str, Any], bool]:
        state = self.state
        if event.kind is EventClass.JOB_ARRIVAL:
            job = instantiate_job(state.app, event.payload, event.time)
            state.jobs[job.job_id] = job
            state.jobs_injected += 1
            state.unfinished_tasks += len(job.tasks)
            state.ready_list.extend(task for task in job.tasks.values() if task.state is TaskState.READY)
            return {"job_id": job.job_id}, True
        if event.kind is EventClass.TASK_FINISH:
            task: TaskInstance = event.payload
            pe = state.pe(task.assigned_pe)
            task.state = TaskState.FINISHED
            pe.busy = False
            pe.current_task = None
            pe.available_at = event.time
            state.unfinished_tasks -= 1
            state.trace.append(
                TraceRecord(
                    job_id=task.job_id,
                    task=task.name,
                    pe_type=pe.ref.pe_type,
                    pe_index=pe.ref.index,
                    t_ready=task.t_ready,
                    t_start=task.t_start,
                    t_finish=task.t_finish,
                    freq_mhz=task.freq_mhz,
                )
            )
            state.ready_list.extend(ready_successors(task, state.jobs[task.job_id]))
            return {"job_id": task.job_id, "task": task.name, "pe": str(pe.ref)}, True
        return {"changes": self._governor_tick(event.time)}, False

    def _governor_tick(self, now: int) -> dict[str, float]:
        state = self.state
        elapsed = max(1, now - state.last_tick)
        changes: dict[str, float] = {}
        for domain in self._dvfs:
            members = sum(1 for pe in state.pes if pe.domain == domain)
            utilization = min(1.0, state.domain_busy_ns[domain] / (elapsed * members))
            opps = state.db.opp_tables[domain]
            current = state.opp_index[domain]
            new = governor_tick(state.governor, utilization, current, opps)
            _LOG.debug("Governor %s: util=%.3f opp %d -> %d", domain, utilization, current, new)
            if new != current:
                state.opp_index[domain] = new
                state.freq_log.append(FreqChange(now, domain, opps[new].freq_mhz))
                changes[domain] = opps[new].freq_mhz
            state.domain_busy_ns[domain] = 0
        state.last_tick = now
        next_tick = now + state.governor.period_ns
        busy = any(pe.busy for pe in state.pes)
        if state.pending_work or busy or next_tick <= state.horizon:
            state.push(next_tick, EventClass.GOVERNOR_TICK)
        return changes

    def _epoch(self) -> None:
        state = self.state
        ready = list(state.ready_list)
        assignments = self.scheduler.schedule(ready, SimView(state))
        _LOG.debug(
            "Epoch t=%d ns: %d ready, %d assigned by %s",
            state.clock,
            len(ready),
            len(assignments),
            self.scheduler.name,
        )
        if not assignments:
            return
        ready_ids = {id(task) for task in ready}
        seen_tasks: set[int] = set()
        seen_pes: set[PeRef] = set()
        for task, ref in assignments:
            if id(task) not in ready_ids:
                raise SchedulerContractError(f"Task {task!r} was not offered in the ready list.")
            if id(task) in seen_tasks:
                raise SchedulerContractError(f"Task {task!r} assigned twice in one epoch.")
            if ref in seen_pes:
                raise SchedulerContractError(f"PE {ref} assigned twice in one epoch.")
            seen_tasks.add(id(task))
            seen_pes.add(ref)
            try:
                pe = state.pe(ref)
            except KeyError as exc:
                raise SchedulerContractError(f"Unknown PE {ref}.") from exc
            dispatch(task, pe, state)
        state.ready_list = [task for task in state.ready_list if id(task) not in seen_tasks]

    def _check_deadlock(self) -> None:
        state = self.state
        if state.pending_work or state.unfinished_tasks == 0:
            return
        if any(pe.busy for pe in state.pes):
            return
        stuck = ", ".join(f"{task.job_id}:{task.name}" for task in state.ready_list[:10])
        raise DeadlockError(
            f"Deadlock at t={state.clock / 1000:g} us: {state.unfinished_tasks} unfinished task(s) "
            f"and no pending work; ready: [{stuck}] (scheduler {self.scheduler.name})"
        )

    def _advance(self, to: int) -> None:
        state = self.state
        while state.clock < to:
            boundary = to
            for pe in state.pes:
                task = pe.current_task
                if pe.busy and task is not None and state.clock < task.t_start < boundary:
                    boundary = task.t_start
            self._integrate(state.clock, boundary)
            state.clock = boundary

    def _integrate(self, start: int, end: int) -> None:
        state = self.state
        dt = end - start
        samples = []
        domain_power_uw = dict.fromkeys(state.thermal, 0)
        for pe in state.pes:
            executing = pe.executing(start)
            opp = state.opp(pe.domain)
            samples.append((pe.ref, executing, opp))
            domain_power_uw[pe.domain] += pe_power_uw(executing, opp)
            if executing:
                pe.busy_ns += dt
                state.domain_busy_ns[pe.domain] += dt
        accumulate_energy(state.energy_fj, samples, dt)
        for domain, node in state.thermal.items():
            temperature = advance_thermal(node, domain_power_uw[domain] * 1e-6, dt)
            if temperature > state.peak_temperature[domain]:
                state.peak_temperature[domain] = temperature


def simulate(
    db: ResourceDb,
    app: AppGraph,
    arrivals: Sequence[int],
    scheduler: "Scheduler",
    governor: GovernorConfig | None = None,
    options: RunOptions | None = None,
    *,
    horizon_ns: int = 0,
) -> SimState:
    """Run the event loop over explicit arrival times (ns) and return the final state."""
    state = SimState.create(db, app, governor or GovernorConfig(), options)
    state.horizon = horizon_ns
    Simulator(state, scheduler).run(arrivals)
    return state


def run(
    db: ResourceDb,
    plan: ArrivalPlan,
    scheduler: "Scheduler",
    governor: GovernorConfig | None = None,
    options: RunOptions | None = None,
) -> "SimReport":
    from dssim.report import summarize

    options = options or RunOptions()
    arrivals = generate_arrivals(plan)
    _LOG.info(
        "Simulating %d job(s) of %s with %s (rate=%s jobs/ms, seed=%s)",
        len(arrivals),
        plan.app.name,
        scheduler.name,
        plan.rate_jobs_per_ms,
        plan.seed,
    )
    state = simulate(
        db,
        plan.app,
        arrivals,
        scheduler,
        governor,
        options,
        horizon_ns=plan.duration_ns,
    )
    report = summarize(state, scheduler.name)
    _LOG.info(
        "Finished at t=%g us: %d/%d job(s) completed, %.6f mJ",
        state.end_time / 1000,
        report.jobs_completed,
        report.jobs_injected,
        report.energy_total_mj,
    )
    return report
