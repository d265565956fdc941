"""Deterministic EV charging ecosystem simulator with an attack orchestrator."""

from .model import (
    BatteryState,
    EvConfig,
    EvseConfig,
    SimParams,
    SimTime,
    baseline_load,
    battery_step,
)
from .scenario import (
    Scenario,
    SchemaError,
    ScenarioSyntaxError,
    Violation,
    parse_scenario,
    serialize_scenario,
    validate_scenario,
)
from .runner import (
    DriverKind,
    InternalInvariantViolation,
    RunExit,
    RunResult,
    ScenarioInvalid,
    run,
)

__all__ = [
    "BatteryState",
    "DriverKind",
    "EvConfig",
    "EvseConfig",
    "InternalInvariantViolation",
    "RunExit",
    "RunResult",
    "Scenario",
    "ScenarioInvalid",
    "ScenarioSyntaxError",
    "SchemaError",
    "SimParams",
    "SimTime",
    "Violation",
    "baseline_load",
    "battery_step",
    "parse_scenario",
    "run",
    "serialize_scenario",
    "validate_scenario",
]

__version__ = "0.1.0"
