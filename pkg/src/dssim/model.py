"""Resource database and application graph types.

All times inside the simulator are integer nanoseconds. Description files carry
microseconds, which are converted with :func:`us_to_ns`.
"""

from __future__ import annotations

import math
from enum import Enum
from functools import cached_property
from typing import NamedTuple

import networkx as nx
from pydantic import BaseModel, ConfigDict, Field

from dssim.power import Opp, opp_table_violations

NS_PER_US = 1000


class UnsupportedTaskError(ValueError):
    pass


def us_to_ns(value_us: float) -> int:
    return round(value_us * NS_PER_US)


def ns_to_us(value_ns: int) -> float:
    return value_ns / NS_PER_US


class PeKind(str, Enum):
    GENERAL_PURPOSE = "general-purpose"
    ACCELERATOR = "accelerator"


class PeRef(NamedTuple):
    pe_type: str
    index: int

    def __str__(self) -> str:
        return f"{self.pe_type}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "PeRef":
        name, sep, index = text.rpartition(":")
        if not sep or not name or not index.isdigit():
            raise ValueError(f"PE reference '{text}' must look like TYPE:INDEX.")
        return cls(name, int(index))


class CommParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    latency_us: float = Field(default=0.0, ge=0)
    bandwidth_bytes_per_us: float = Field(default=1000.0, gt=0)


class ThermalParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    r_k_per_w: float = Field(default=2.0, gt=0)
    c_j_per_k: float = Field(default=0.002, gt=0)
    t_amb_k: float = Field(default=298.15, gt=0)


class PeType(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    kind: PeKind
    count: int
    freq_domain: str

    @property
    def is_accelerator(self) -> bool:
        return self.kind is PeKind.ACCELERATOR


class TaskDef(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    # PE type name -> latency in us at the reference frequency.
    profile: dict[str, float]

    def supports(self, pe_type: str) -> bool:
        return pe_type in self.profile


class Edge(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    src: str
    dst: str
    volume_bytes: float = Field(default=0.0, ge=0)


class AppGraph(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    tasks: list[TaskDef]
    edges: list[Edge] = Field(default_factory=list)

    @cached_property
    def graph(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(task.name for task in self.tasks)
        for edge in self.edges:
            graph.add_edge(edge.src, edge.dst, volume_bytes=edge.volume_bytes)
        return graph

    @cached_property
    def task_index(self) -> dict[str, int]:
        return {task.name: i for i, task in enumerate(self.tasks)}

    def task(self, name: str) -> TaskDef:
        return self.tasks[self.task_index[name]]

    def predecessors(self, name: str) -> list[Edge]:
        return self.incoming.get(name, [])

    def successors(self, name: str) -> list[str]:
        return self.outgoing.get(name, [])

    def sources(self) -> list[TaskDef]:
        return [task for task in self.tasks if not self.incoming.get(task.name)]

    def sinks(self) -> list[TaskDef]:
        return [task for task in self.tasks if not self.outgoing.get(task.name)]

    @cached_property
    def incoming(self) -> dict[str, list[Edge]]:
        incoming: dict[str, list[Edge]] = {}
        for edge in self.edges:
            incoming.setdefault(edge.dst, []).append(edge)
        return incoming

    @cached_property
    def outgoing(self) -> dict[str, list[str]]:
        # Successors are kept in task-list order so readiness is deterministic.
        order = self.task_index
        outgoing: dict[str, list[str]] = {}
        for edge in self.edges:
            outgoing.setdefault(edge.src, []).append(edge.dst)
        return {
            name: sorted(dict.fromkeys(dsts), key=lambda dst: order.get(dst, len(order)))
            for name, dsts in outgoing.items()
        }


class ResourceDb(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    pe_types: list[PeType]
    opp_tables: dict[str, list[Opp]]
    comm: CommParams = Field(default_factory=CommParams)
    ref_freq_mhz: dict[str, float] = Field(default_factory=dict)
    thermal: dict[str, ThermalParams] = Field(default_factory=dict)
    power_model: str = "user"

    def pe_type(self, name: str) -> PeType:
        for pe_type in self.pe_types:
            if pe_type.name == name:
                return pe_type
        raise KeyError(name)

    def has_pe_type(self, name: str) -> bool:
        return any(pe_type.name == name for pe_type in self.pe_types)

    def ref_freq(self, domain: str) -> float:
        if domain in self.ref_freq_mhz:
            return self.ref_freq_mhz[domain]
        return self.opp_tables[domain][-1].freq_mhz

    def thermal_params(self, domain: str) -> ThermalParams:
        return self.thermal.get(domain, ThermalParams())

    def domains(self) -> list[str]:
        return list(dict.fromkeys(pe_type.freq_domain for pe_type in self.pe_types))

    def pe_refs(self) -> list[PeRef]:
        return [PeRef(pe_type.name, i) for pe_type in self.pe_types for i in range(max(pe_type.count, 0))]

    def type_order(self) -> dict[str, int]:
        return {pe_type.name: i for i, pe_type in enumerate(self.pe_types)}

    def with_comm(self, comm: CommParams) -> "ResourceDb":
        return self.model_copy(update={"comm": comm})


def validate_soc(db: ResourceDb) -> list[str]:
    violations: list[str] = []
    seen: set[str] = set()
    for i, pe_type in enumerate(db.pe_types):
        label = f"pe_types[{i}] ({pe_type.name})"
        if pe_type.name in seen:
            violations.append(f"{label}.name: duplicate PE type name '{pe_type.name}'")
        seen.add(pe_type.name)
        if pe_type.count < 1:
            violations.append(f"{label}.count: count must be >= 1 (got {pe_type.count})")
        opps = db.opp_tables.get(pe_type.freq_domain)
        if opps is None:
            violations.append(
                f"{label}.freq_domain: frequency domain '{pe_type.freq_domain}' has no opp_table"
            )
        elif pe_type.is_accelerator and len(opps) != 1:
            violations.append(
                f"{label}.freq_domain: accelerator domain '{pe_type.freq_domain}' must have a single OPP"
            )
    for domain, opps in db.opp_tables.items():
        violations.extend(opp_table_violations(domain, opps))
    for domain, freq in db.ref_freq_mhz.items():
        if domain not in db.opp_tables:
            violations.append(f"ref_freq_mhz.{domain}: unknown frequency domain '{domain}'")
        elif freq <= 0:
            violations.append(f"ref_freq_mhz.{domain}: reference frequency must be positive")
    for domain in db.thermal:
        if domain not in db.opp_tables:
            violations.append(f"thermal.{domain}: unknown frequency domain '{domain}'")
    return violations


def validate_app(app: AppGraph, db: ResourceDb, *, check_support: bool = True) -> list[str]:
    """Structural and support violations of ``app`` against ``db``.

    With ``check_support=False`` only the graph and latency values are checked;
    tasks the SoC cannot run are then left for the kernel to report as a deadlock.
    """
    violations: list[str] = []
    names = [task.name for task in app.tasks]
    if not names:
        violations.append(f"app {app.name}: tasks must not be empty")
        return violations
    duplicates = sorted({name for name in names if names.count(name) > 1})
    for name in duplicates:
        violations.append(f"tasks.{name}: duplicate task name")
    known = set(names)
    for i, edge in enumerate(app.edges):
        for end in (edge.src, edge.dst):
            if end not in known:
                violations.append(f"edges[{i}]: endpoint '{end}' is not a task")
    if not nx.is_directed_acyclic_graph(app.graph):
        cycle = nx.find_cycle(app.graph)
        # Report the cycle by its lexicographically smallest rotation so edge order does not matter.
        nodes = [src for src, _ in cycle]
        start = nodes.index(min(nodes))
        rotated = nodes[start:] + nodes[:start]
        violations.append(f"edges: cycle {' -> '.join(rotated + [rotated[0]])}")
    for task in app.tasks:
        if not task.profile:
            violations.append(f"tasks.{task.name}.profile: latency profile must not be empty")
            continue
        for pe_type, latency in sorted(task.profile.items()):
            if latency <= 0:
                violations.append(f"tasks.{task.name}.profile.{pe_type}: latency must be > 0")
            if check_support and not db.has_pe_type(pe_type):
                violations.append(f"tasks.{task.name}.profile.{pe_type}: unknown PE type '{pe_type}'")
        if check_support and not any(
            db.has_pe_type(pe_type) and db.pe_type(pe_type).count >= 1 for pe_type in task.profile
        ):
            violations.append(f"tasks.{task.name}: unschedulable task, no supporting PE type in the SoC")
    return violations


def execution_time(task: TaskDef, pe_type: PeType, freq: float, ref_freq: float) -> int:
    """Latency of ``task`` on ``pe_type`` in ns at ``freq`` MHz.

    General-purpose latency scales with ref_freq / freq; accelerators run at a
    fixed clock.
    """
    if pe_type.name not in task.profile:
        raise UnsupportedTaskError(f"Task '{task.name}' is not supported on PE type '{pe_type.name}'.")
    latency_ns = max(1, us_to_ns(task.profile[pe_type.name]))
    if pe_type.is_accelerator or freq == ref_freq:
        return latency_ns
    if freq <= 0:
        raise ValueError(f"Frequency must be positive (got {freq}).")
    return math.ceil(latency_ns * ref_freq / freq)
