"""Exhaustive single-job optimizer that emits a static table.

Every task -> PE-type assignment is replayed through the kernel on an otherwise
empty SoC; instances of a type are interchangeable there, so only types are
enumerated. For each assignment the search branches over every dispatch
decision that changes the schedule: which ready tasks take the free instances
of a type, and the order they are dispatched in when that order decides the
instance binding or the order of equal-time completions. The winning dispatch
order becomes the table's priority list, so a table replay reproduces the
schedule exactly.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Hashable, Sequence

from dssim.kernel import Assignment, DeadlockError, RunOptions, SchedulerContractError, SimView, simulate
from dssim.model import AppGraph, CommParams, PeRef, ResourceDb, ns_to_us
from dssim.power import GovernorConfig
from dssim.sched import MissingTableEntryError, StaticTable, TableMode, TableScheduler
from dssim.workload import TaskInstance

_LOG = logging.getLogger("dssim.oracle")

MAX_ORACLE_TASKS = 12
# Larger simultaneous dispatches keep a single order.
MAX_PERMUTED_DISPATCH = 8

_REPLAY_OPTIONS = RunOptions(warmup_fraction=0.0, record_events=False)


class OracleTooLargeError(ValueError):
    pass


class UnschedulableError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    table: StaticTable
    makespan: int
    explored: int

    @property
    def makespan_us(self) -> float:
        return ns_to_us(self.makespan)


class _DecisionReplay:
    """Type-level dispatcher driven by a sequence of branch choices.

    Choice points past the end of ``decisions`` take option 0. The option count
    of every choice point reached is appended to ``branching``.
    """

    name = "oracle"

    def __init__(self, entries: dict[str, str], decisions: Sequence[int], locality: bool):
        self.entries = entries
        self.decisions = decisions
        self.locality = locality
        self.branching: list[int] = []
        self.order: list[str] = []

    def schedule(self, ready: Sequence[TaskInstance], view: SimView) -> list[Assignment]:
        free: dict[str, list[PeRef]] = {}
        for pe in view.idle_pes():
            free.setdefault(pe.ref.pe_type, []).append(pe.ref)
        groups: dict[str, list[TaskInstance]] = {}
        for task in ready:
            groups.setdefault(self.entries[task.name], []).append(task)
        dispatched: list[TaskInstance] = []
        for pe_type in view.db.pe_types:
            group = groups.get(pe_type.name)
            instances = free.get(pe_type.name)
            if not group or not instances:
                continue
            subsets = list(itertools.combinations(group, min(len(group), len(instances))))
            dispatched.extend(subsets[self._choose(len(subsets))])
        orders = self._dispatch_orders(dispatched, free, view)
        order = orders[self._choose(len(orders))]
        self.order.extend(task.name for task in order)
        return self._bind(order, free)

    def _choose(self, count: int) -> int:
        if count == 1:
            return 0
        position = len(self.branching)
        self.branching.append(count)
        return self.decisions[position] if position < len(self.decisions) else 0

    def _bind(self, order: Sequence[TaskInstance], free: dict[str, list[PeRef]]) -> list[Assignment]:
        """Lowest free instance of the mapped type, in dispatch order (the ``type_rr`` rule for job 0)."""
        taken: dict[str, int] = {}
        assignments = []
        for task in order:
            pe_type = self.entries[task.name]
            index = taken.get(pe_type, 0)
            taken[pe_type] = index + 1
            assignments.append(Assignment(task, free[pe_type][index]))
        return assignments

    def _dispatch_orders(
        self, dispatched: list[TaskInstance], free: dict[str, list[PeRef]], view: SimView
    ) -> list[tuple[TaskInstance, ...]]:
        if len(dispatched) < 2 or len(dispatched) > MAX_PERMUTED_DISPATCH:
            return [tuple(dispatched)]
        distinct: dict[Hashable, tuple[TaskInstance, ...]] = {}
        for order in itertools.permutations(dispatched):
            distinct.setdefault(self._effect(order, free, view), order)
        return list(distinct.values())

    def _effect(self, order: Sequence[TaskInstance], free: dict[str, list[PeRef]], view: SimView) -> Hashable:
        """The part of a dispatch order the kernel can observe."""
        pairs = self._bind(order, free)
        by_finish: dict[int, list[int]] = {}
        for task, ref in pairs:
            finish = view.data_ready_time(task, ref) + view.exec_time(task, ref)
            by_finish.setdefault(finish, []).append(id(task))
        ties = tuple(sorted((time, tuple(ids)) for time, ids in by_finish.items() if len(ids) > 1))
        if not self.locality:
            return ties
        return ties, frozenset((id(task), ref) for task, ref in pairs)


def _next_decisions(taken: list[int], branching: list[int]) -> list[int] | None:
    for position in range(len(branching) - 1, -1, -1):
        if taken[position] + 1 < branching[position]:
            return taken[:position] + [taken[position] + 1]
    return None


def _locality_matters(app: AppGraph, db: ResourceDb) -> bool:
    return db.comm.latency_us > 0 or any(edge.volume_bytes > 0 for edge in app.edges)


def _best_dispatch(app: AppGraph, db: ResourceDb, entries: dict[str, str], locality: bool) -> tuple[int, list[str]]:
    """Shortest single-job makespan and its dispatch order for a fixed type assignment."""
    best: tuple[int, list[str]] | None = None
    decisions: list[int] | None = []
    while decisions is not None:
        replay = _DecisionReplay(entries, decisions, locality)
        state = simulate(db, app, [0], replay, GovernorConfig(), _REPLAY_OPTIONS)
        makespan = state.jobs[0].makespan
        if makespan is None:
            raise DeadlockError(f"Assignment {entries} did not complete '{app.name}'.")
        if best is None or makespan < best[0]:
            best = (makespan, replay.order)
        taken = decisions + [0] * (len(replay.branching) - len(decisions))
        decisions = _next_decisions(taken, replay.branching)
    assert best is not None
    return best


def single_job_makespan(table: StaticTable, app: AppGraph, db: ResourceDb) -> int:
    """Makespan in ns of one job arriving at t=0 and placed by ``table``."""
    state = simulate(db, app, [0], TableScheduler(table), GovernorConfig(), _REPLAY_OPTIONS)
    makespan = state.jobs[0].makespan
    if makespan is None:
        raise DeadlockError(f"Table for '{app.name}' did not complete the job.")
    return makespan


def optimal_single_job(app: AppGraph, db: ResourceDb, comm: CommParams | None = None) -> OracleResult:
    if len(app.tasks) > MAX_ORACLE_TASKS:
        raise OracleTooLargeError(
            f"Application '{app.name}' has {len(app.tasks)} tasks; the exhaustive oracle "
            f"handles at most {MAX_ORACLE_TASKS}."
        )
    if comm is not None:
        db = db.with_comm(comm)
    names = [task.name for task in app.tasks]
    choices: list[list[str]] = []
    for task in app.tasks:
        supported = [pe_type.name for pe_type in db.pe_types if task.supports(pe_type.name)]
        if not supported:
            raise UnschedulableError(f"Task '{task.name}' has no supporting PE type in the SoC.")
        choices.append(supported)

    locality = _locality_matters(app, db)
    best: tuple[int, dict[str, str], list[str]] | None = None
    explored = 0
    for combo in itertools.product(*choices):
        entries = dict(zip(names, combo))
        makespan, order = _best_dispatch(app, db, entries, locality)
        explored += 1
        if best is None or makespan < best[0]:
            best = (makespan, entries, order)
    assert best is not None
    table = StaticTable(app=app.name, mode=TableMode.TYPE_RR, entries=best[1], priority=best[2])
    result = OracleResult(table=table, makespan=single_job_makespan(table, app, db), explored=explored)
    if result.makespan != best[0]:
        _LOG.warning("Oracle table for %s replays to %d ns; the search found %d ns", app.name, result.makespan, best[0])
    _LOG.info(
        "Oracle for %s: makespan %g us over %d assignment(s)",
        app.name,
        result.makespan_us,
        explored,
    )
    return result


def verify_table(result: OracleResult, app: AppGraph, db: ResourceDb) -> bool:
    try:
        makespan = single_job_makespan(result.table, app, db)
    except (DeadlockError, SchedulerContractError, MissingTableEntryError) as exc:
        _LOG.debug("Table replay failed: %s", exc)
        return False
    return makespan == result.makespan
