"""Power, energy, DVFS governor and lumped thermal models.

Power values come from per-OPP tables rather than a C*V^2*f formula. Internally
power is held in integer microwatts so that energy accumulates exactly in
femtojoules (uW * ns).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Hashable

from pydantic import BaseModel, ConfigDict, Field, model_validator

_LOG = logging.getLogger("dssim.power")

# Seconds per nanosecond.
_NS = 1e-9


class Opp(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    freq_mhz: float = Field(gt=0)
    voltage_v: float = Field(ge=0)
    dyn_power_mw: float = Field(ge=0)
    static_power_mw: float = Field(ge=0)

    @property
    def dyn_power_uw(self) -> int:
        return round(self.dyn_power_mw * 1000)

    @property
    def static_power_uw(self) -> int:
        return round(self.static_power_mw * 1000)


class GovernorPolicy(str, Enum):
    PERFORMANCE = "performance"
    POWERSAVE = "powersave"
    ONDEMAND = "ondemand"
    CONSTANT = "constant"


class GovernorConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    policy: GovernorPolicy = GovernorPolicy.PERFORMANCE
    period_us: float = 100.0
    up_threshold: float = 0.8
    down_threshold: float = 0.3
    constant_freq_mhz: float | None = None

    @model_validator(mode="after")
    def _check_invariants(self) -> "GovernorConfig":
        if self.period_us <= 0:
            raise ValueError("Governor period_us must be positive.")
        if not 0 < self.down_threshold < self.up_threshold <= 1:
            raise ValueError("Governor thresholds must satisfy 0 < down_threshold < up_threshold <= 1.")
        if self.policy is GovernorPolicy.CONSTANT and self.constant_freq_mhz is None:
            raise ValueError("Governor policy 'constant' requires constant_freq_mhz.")
        return self

    @property
    def period_ns(self) -> int:
        return round(self.period_us * 1000)


@dataclass
class ThermalNode:
    r_k_per_w: float
    c_j_per_k: float
    t_amb_k: float
    t_k: float

    @property
    def tau_s(self) -> float:
        return self.r_k_per_w * self.c_j_per_k

    @property
    def max_step_ns(self) -> int:
        # Explicit integration is only stable for steps well below R*C.
        return max(1, round(self.tau_s / 10 / _NS))


def opp_table_violations(domain: str, opps: list[Opp]) -> list[str]:
    violations: list[str] = []
    if not opps:
        violations.append(f"opp_tables.{domain}: table must contain at least one OPP")
        return violations
    for prev, cur in zip(opps, opps[1:]):
        if cur.freq_mhz <= prev.freq_mhz:
            violations.append(f"opp_tables.{domain}: frequencies must be strictly ascending")
        if cur.dyn_power_mw < prev.dyn_power_mw or cur.static_power_mw < prev.static_power_mw:
            violations.append(f"opp_tables.{domain}: power must be non-decreasing with frequency")
    return violations


def pe_power(busy: bool, opp: Opp) -> float:
    """Power draw of one PE in mW."""
    if busy:
        return opp.dyn_power_mw + opp.static_power_mw
    return opp.static_power_mw


def pe_power_uw(busy: bool, opp: Opp) -> int:
    if busy:
        return opp.dyn_power_uw + opp.static_power_uw
    return opp.static_power_uw


def accumulate_energy(
    energy_fj: dict[Hashable, int],
    samples: Iterable[tuple[Hashable, bool, Opp]],
    interval_ns: int,
) -> dict[Hashable, int]:
    """Add one constant-power interval to the per-PE energy accumulators.

    ``samples`` yields ``(pe, busy, opp)`` for every PE; the interval must not
    span a busy/idle or OPP change.
    """
    if interval_ns <= 0:
        return energy_fj
    for pe, busy, opp in samples:
        energy_fj[pe] = energy_fj.get(pe, 0) + pe_power_uw(busy, opp) * interval_ns
    return energy_fj


def initial_opp_index(config: GovernorConfig, opps: list[Opp]) -> int:
    if len(opps) == 1:
        return 0
    if config.policy is GovernorPolicy.POWERSAVE:
        return 0
    if config.policy is GovernorPolicy.CONSTANT:
        return _constant_index(config.constant_freq_mhz or 0.0, opps)
    return len(opps) - 1


def governor_tick(
    config: GovernorConfig,
    utilization: float,
    current: int,
    opps: list[Opp],
) -> int:
    """Next OPP index for a frequency domain after one governor period."""
    highest = len(opps) - 1
    policy = config.policy
    if policy is GovernorPolicy.PERFORMANCE:
        return highest
    if policy is GovernorPolicy.POWERSAVE:
        return 0
    if policy is GovernorPolicy.CONSTANT:
        return _constant_index(config.constant_freq_mhz or 0.0, opps)
    if utilization > config.up_threshold:
        return highest
    if utilization < config.down_threshold:
        return max(0, current - 1)
    return min(max(current, 0), highest)


def thermal_step(node: ThermalNode, power_w: float, dt_ns: int) -> float:
    """Advance a first-order RC node by ``dt_ns``; returns the new temperature."""
    dt_s = dt_ns * _NS
    rise = power_w * node.r_k_per_w - (node.t_k - node.t_amb_k)
    node.t_k = node.t_k + (dt_s / node.tau_s) * rise
    return node.t_k


def advance_thermal(node: ThermalNode, power_w: float, dt_ns: int) -> float:
    """Integrate over an arbitrary interval in steps no longer than the stability grain."""
    remaining = dt_ns
    grain = node.max_step_ns
    while remaining > 0:
        step = min(grain, remaining)
        thermal_step(node, power_w, step)
        remaining -= step
    return node.t_k


def _constant_index(freq_mhz: float, opps: list[Opp]) -> int:
    index = 0
    for i, opp in enumerate(opps):
        if opp.freq_mhz <= freq_mhz:
            index = i
    return index
