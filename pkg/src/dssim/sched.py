"""Scheduler plug-in interface and the built-in MET, ETF and static-table schedulers."""

from __future__ import annotations

import logging
from enum import Enum
from typing import Protocol, Sequence

from pydantic import BaseModel, ConfigDict, Field

from dssim.kernel import Assignment, SimView
from dssim.model import AppGraph, PeRef, ResourceDb, TaskDef
from dssim.workload import TaskInstance

_LOG = logging.getLogger("dssim.sched")

SCHEDULER_NAMES = ("met", "etf", "table")


class MissingTableEntryError(KeyError):
    pass


class Scheduler(Protocol):
    name: str

    def schedule(self, ready: Sequence[TaskInstance], view: SimView) -> list[Assignment]: ...


class TableMode(str, Enum):
    INSTANCE = "instance"
    TYPE_RR = "type_rr"


class StaticTable(BaseModel):
    """Offline task -> PE mapping.

    In ``instance`` mode entries are ``TYPE:INDEX`` references; in ``type_rr``
    mode they name a PE type and any idle instance of it may be used.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    app: str
    mode: TableMode = TableMode.INSTANCE
    entries: dict[str, str]
    priority: list[str] = Field(default_factory=list)

    def target_type(self, task: str) -> str:
        entry = self._entry(task)
        if self.mode is TableMode.TYPE_RR:
            return entry
        return PeRef.parse(entry).pe_type

    def target_instance(self, task: str) -> PeRef:
        return PeRef.parse(self._entry(task))

    def _entry(self, task: str) -> str:
        try:
            return self.entries[task]
        except KeyError:
            raise MissingTableEntryError(f"Static table for '{self.app}' has no entry for task '{task}'.") from None


def fastest_type(task: TaskDef, db: ResourceDb) -> str | None:
    """PE type with the smallest reference latency; ties go to the type listed first in the SoC."""
    best: str | None = None
    for pe_type in db.pe_types:
        if pe_type.name not in task.profile:
            continue
        if best is None or task.profile[pe_type.name] < task.profile[best]:
            best = pe_type.name
    return best


def met_schedule(ready: Sequence[TaskInstance], view: SimView) -> list[Assignment]:
    free: dict[str, list[PeRef]] = {}
    for pe in view.idle_pes():
        free.setdefault(pe.ref.pe_type, []).append(pe.ref)
    if not free:
        return []
    targets: dict[int, str | None] = {}
    assignments: list[Assignment] = []
    for task in ready:
        key = id(task.task)
        if key not in targets:
            targets[key] = fastest_type(task.task, view.db)
        instances = free.get(targets[key])
        if instances:
            assignments.append(Assignment(task, instances.pop(0)))
    return assignments


def etf_schedule(ready: Sequence[TaskInstance], view: SimView) -> list[Assignment]:
    """Commit (task, idle PE) pairs in order of earliest start time.

    Ties are broken by execution time at the current OPP, then PE ordinal, then
    the task's position in the ready list. A pair's start time does not depend
    on other pairs committed in the same call, so one sorted pass is equivalent
    to repeatedly selecting the global minimum.
    """
    idle = view.idle_pes()
    if not idle:
        return []
    durations: dict[tuple[int, str], int | None] = {}
    candidates: list[tuple[int, int, int, int, PeRef]] = []
    for position, task in enumerate(ready):
        for pe in idle:
            key = (id(task.task), pe.ref.pe_type)
            if key not in durations:
                durations[key] = view.exec_time(task, pe.ref)
            duration = durations[key]
            if duration is None:
                continue
            start = view.data_ready_time(task, pe.ref)
            candidates.append((start, duration, pe.ordinal, position, pe.ref))
    candidates.sort(key=lambda item: item[:4])
    taken_pes: set[PeRef] = set()
    taken_tasks: set[int] = set()
    assignments: list[Assignment] = []
    for _start, _duration, _ordinal, position, ref in candidates:
        if position in taken_tasks or ref in taken_pes:
            continue
        taken_tasks.add(position)
        taken_pes.add(ref)
        assignments.append(Assignment(ready[position], ref))
    return assignments


def table_schedule(ready: Sequence[TaskInstance], view: SimView, table: StaticTable) -> list[Assignment]:
    order = {name: i for i, name in enumerate(table.priority)}
    ranked = sorted(enumerate(ready), key=lambda item: (order.get(item[1].name, len(order)), item[0]))
    idle = {pe.ref for pe in view.idle_pes()}
    taken: set[PeRef] = set()
    assignments: list[Assignment] = []
    for _position, task in ranked:
        ref = _table_target(task, table, view, idle - taken)
        if ref is None:
            continue
        taken.add(ref)
        assignments.append(Assignment(task, ref))
    return assignments


def _table_target(task: TaskInstance, table: StaticTable, view: SimView, free: set[PeRef]) -> PeRef | None:
    if table.mode is TableMode.INSTANCE:
        ref = table.target_instance(task.name)
        return ref if ref in free else None
    pe_type = table.target_type(task.name)
    if not view.db.has_pe_type(pe_type):
        return None
    count = view.db.pe_type(pe_type).count
    first = task.job_id % count
    for step in range(count):
        ref = PeRef(pe_type, (first + step) % count)
        if ref in free:
            return ref
    return None


class MetScheduler:
    name = "met"

    def schedule(self, ready: Sequence[TaskInstance], view: SimView) -> list[Assignment]:
        return met_schedule(ready, view)


class EtfScheduler:
    name = "etf"

    def schedule(self, ready: Sequence[TaskInstance], view: SimView) -> list[Assignment]:
        return etf_schedule(ready, view)


class TableScheduler:
    name = "table"

    def __init__(self, table: StaticTable):
        self.table = table

    def schedule(self, ready: Sequence[TaskInstance], view: SimView) -> list[Assignment]:
        return table_schedule(ready, view, self.table)


def build_scheduler(name: str, table: StaticTable | None = None) -> Scheduler:
    key = name.strip().lower()
    _LOG.debug("Building scheduler %s", key)
    if key == "met":
        return MetScheduler()
    if key == "etf":
        return EtfScheduler()
    if key == "table":
        if table is None:
            raise ValueError("Scheduler 'table' requires a static table (--table).")
        return TableScheduler(table)
    raise ValueError(f"Unknown scheduler '{name}'. Expected one of: {', '.join(SCHEDULER_NAMES)}.")


def validate_table(table: StaticTable, app: AppGraph, db: ResourceDb) -> list[str]:
    violations: list[str] = []
    if table.app != app.name:
        violations.append(f"app: table targets '{table.app}' but the application is '{app.name}'")
    known = {task.name for task in app.tasks}
    for task in app.tasks:
        if task.name not in table.entries:
            violations.append(f"entries.{task.name}: task missing from table")
    for name, entry in sorted(table.entries.items()):
        if name not in known:
            violations.append(f"entries.{name}: unknown task '{name}'")
            continue
        if table.mode is TableMode.TYPE_RR:
            pe_type, index = entry, None
        else:
            try:
                ref = PeRef.parse(entry)
            except ValueError as exc:
                violations.append(f"entries.{name}: {exc}")
                continue
            pe_type, index = ref.pe_type, ref.index
        if not db.has_pe_type(pe_type):
            violations.append(f"entries.{name}: unknown PE type '{pe_type}'")
            continue
        if not app.task(name).supports(pe_type):
            violations.append(f"entries.{name}: PE type '{pe_type}' does not support task '{name}'")
        if index is not None and not 0 <= index < db.pe_type(pe_type).count:
            violations.append(f"entries.{name}: instance index {index} out of range for '{pe_type}'")
    for name in table.priority:
        if name not in known:
            violations.append(f"priority: unknown task '{name}'")
    if len(set(table.priority)) != len(table.priority):
        violations.append("priority: duplicate task names")
    return violations
