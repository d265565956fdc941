"""Attack plans and their execution: broken-wire severs, power disruption windows."""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .fuzz import FuzzPlan, FuzzStrategy, MutationMode
from .model import SimTime
from .ocpp import ALL_ACTIONS, OcppAction
from .simnet import SimLink
from .telemetry import TelemetryRecord, TelemetryStore

ALL_EVSES = "*"
CSMS_TARGET = "csms"


class UnresolvedTarget(Exception):
    pass


class AttackKind(str, Enum):
    BROKEN_WIRE_L1 = "broken-wire-l1"
    BROKEN_WIRE_L3 = "broken-wire-l3"
    FUZZIFICATION = "fuzzification"


@dataclass(frozen=True)
class AttackPlan:
    kind: AttackKind
    target_id: str
    start_s: float
    duration_s: float | None = None
    params: dict | None = None

    def __post_init__(self):
        if self.start_s < 0:
            raise ValueError("start_s must be nonnegative")
        if self.duration_s is not None and self.duration_s <= 0:
            raise ValueError("duration_s must be positive")

    @property
    def end_s(self) -> float | None:
        return None if self.duration_s is None else self.start_s + self.duration_s


@dataclass(frozen=True)
class PowerDisruptionParams:
    reduction_factor: float = 0.45
    jitter: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.reduction_factor < 1.0:
            raise ValueError("reduction_factor must be in (0,1)")
        if not 0.0 <= self.jitter <= 0.05:
            raise ValueError("jitter must be in [0,0.05]")


def parse_power_params(params: dict | None) -> PowerDisruptionParams:
    params = params or {}
    return PowerDisruptionParams(
        reduction_factor=float(params.get("reduction_factor", 0.45)),
        jitter=float(params.get("jitter", 0.0)),
    )


def parse_fuzz_plan(params: dict | None, fallback_seed: int) -> FuzzPlan:
    if not params or "strategy" not in params:
        raise ValueError("fuzzification requires params.strategy")
    actions = tuple(OcppAction(a) for a in params.get("actions", [a.value for a in ALL_ACTIONS]))
    modes = tuple(MutationMode(m) for m in params.get("mutation_modes", ["none"]))
    return FuzzPlan(
        strategy=FuzzStrategy(params["strategy"]),
        repetitions=int(params.get("repetitions", 100)),
        actions=actions,
        mutation_modes=modes,
        injection_points=tuple(int(i) for i in params.get("injection_points", [])),
        seed=int(params["seed"]) if "seed" in params else fallback_seed,
    )


@dataclass(frozen=True)
class ScheduledAttack:
    at_s: float
    edge: str  # "start" | "end"
    plan: AttackPlan


def schedule(plans, scenario) -> list[ScheduledAttack]:
    """Expand plans into timed start/end events, checking target resolution."""
    link_ids = {f"{ev.id}--{ev.target_evse}" for ev in scenario.evs}
    evse_ids = {e.id for e in scenario.evses}
    out = []
    for plan in plans:
        if plan.kind is AttackKind.BROKEN_WIRE_L1:
            if plan.target_id not in link_ids:
                raise UnresolvedTarget(f"no such link: {plan.target_id}")
        elif plan.kind is AttackKind.BROKEN_WIRE_L3:
            if plan.target_id != ALL_EVSES and plan.target_id not in evse_ids:
                raise UnresolvedTarget(f"no such EVSE: {plan.target_id}")
            if plan.duration_s is None:
                raise ValueError("broken-wire-l3 requires duration_s")
        elif plan.kind is AttackKind.FUZZIFICATION:
            if plan.target_id != CSMS_TARGET:
                raise UnresolvedTarget(f"fuzzification targets '{CSMS_TARGET}', got {plan.target_id}")
        out.append(ScheduledAttack(plan.start_s, "start", plan))
        if plan.end_s is not None:
            out.append(ScheduledAttack(plan.end_s, "end", plan))
    out.sort(key=lambda s: s.at_s)
    return out


def exec_broken_wire_l1(
    link: SimLink, at: SimTime, store: TelemetryStore | None = None
) -> SimLink:
    """Sever the EV-EVSE bridge: total loss, in-flight traffic dropped."""
    link.sever(at)
    if store is not None:
        store.append(TelemetryRecord(
            ts=at,
            source="attack",
            kind="attack-start",
            layer="L1",
            payload={"kind": AttackKind.BROKEN_WIRE_L1.value, "target": link.id,
                     "layers": ["L1", "L2"]},
        ))
    return link


class PowerWindow:
    """Active power-disruption window over a set of EVSEs.

    Inside [start_s, end_s) the delivered power multiplier is
    (1 - reduction_factor) plus a per-tick uniform jitter; outside it is 1.0
    exactly and no randomness is consumed.
    """

    def __init__(self, evse_ids, params: PowerDisruptionParams, window: tuple[float, float]):
        start, end = window
        if start >= end:
            raise ValueError("window start must precede end")
        self.evse_ids = None if evse_ids is None else frozenset(evse_ids)
        self.params = params
        self.start_s = start
        self.end_s = end

    def targets(self, evse_id: str) -> bool:
        return self.evse_ids is None or evse_id in self.evse_ids

    def active(self, t_s: float) -> bool:
        return self.start_s <= t_s < self.end_s

    def multiplier(self, rng: random.Random, t_s: float) -> float:
        if not self.active(t_s):
            return 1.0
        m = 1.0 - self.params.reduction_factor
        if self.params.jitter > 0:
            m += rng.uniform(-self.params.jitter, self.params.jitter)
        return m


def exec_broken_wire_l3(
    evse_ids, params: PowerDisruptionParams, window: tuple[float, float]
) -> PowerWindow:
    """Return the power-modifier handle for the given window and targets."""
    return PowerWindow(evse_ids, params, window)
