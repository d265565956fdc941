"""Scenario documents: strict JSON parsing, cross-reference validation, round trip."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .attacks import ALL_EVSES, CSMS_TARGET, AttackKind, AttackPlan, parse_fuzz_plan, parse_power_params
from .model import EvConfig, EvseConfig, SimParams
from .ocpp import BootPolicy, CsmsPolicy

MAX_SEED = 2 ** 64 - 1

DEFAULT_SCHEDULE_END_S = 3600.0
DEFAULT_BASELINE_MW = (30.0,) * 24


class ScenarioSyntaxError(Exception):
    """The document is not well-formed JSON."""


class SchemaError(Exception):
    """A field is missing, mistyped, out of range, or unknown; names the path."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


@dataclass(frozen=True)
class Violation:
    path: str
    reason: str

    def __str__(self) -> str:
        return f"{self.path}: {self.reason}"


@dataclass(frozen=True)
class Scenario:
    evs: tuple[EvConfig, ...]
    evses: tuple[EvseConfig, ...]
    csms: CsmsPolicy = CsmsPolicy()
    attacks: tuple[AttackPlan, ...] = ()
    schedule_end_s: float = DEFAULT_SCHEDULE_END_S
    seed: int = 0
    baseline_load_profile: tuple[float, ...] = DEFAULT_BASELINE_MW
    sim: SimParams = SimParams()

    def link_ids(self) -> tuple[str, ...]:
        return tuple(f"{ev.id}--{ev.target_evse}" for ev in self.evs)


def _expect(obj, path, typ, typename):
    if not isinstance(obj, typ) or isinstance(obj, bool) and typ is not bool:
        raise SchemaError(path, f"expected {typename}")
    return obj


def _number(obj, path) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise SchemaError(path, "expected number")
    return float(obj)


def _check_keys(d: dict, allowed: set, path: str) -> None:
    for key in d:
        if key not in allowed:
            raise SchemaError(f"{path}.{key}" if path else key, "unknown key")


def _parse_ev(d: dict, path: str) -> EvConfig:
    _expect(d, path, dict, "object")
    _check_keys(d, {"id", "battery_capacity_kwh", "initial_soc", "max_charge_rate_kw",
                    "plug_in_time_s", "target_evse", "interrupt_time_s"}, path)
    for req in ("id", "battery_capacity_kwh", "initial_soc", "max_charge_rate_kw",
                "target_evse"):
        if req not in d:
            raise SchemaError(f"{path}.{req}", "required")
    try:
        return EvConfig(
            id=_expect(d["id"], f"{path}.id", str, "string"),
            battery_capacity_kwh=_number(d["battery_capacity_kwh"], f"{path}.battery_capacity_kwh"),
            initial_soc=_number(d["initial_soc"], f"{path}.initial_soc"),
            max_charge_rate_kw=_number(d["max_charge_rate_kw"], f"{path}.max_charge_rate_kw"),
            plug_in_time_s=_number(d.get("plug_in_time_s", 0.0), f"{path}.plug_in_time_s"),
            target_evse=_expect(d["target_evse"], f"{path}.target_evse", str, "string"),
            interrupt_time_s=(
                None if d.get("interrupt_time_s") is None
                else _number(d["interrupt_time_s"], f"{path}.interrupt_time_s")
            ),
        )
    except ValueError as e:
        raise SchemaError(_blame_ev_field(d, path), str(e)) from e


def _blame_ev_field(d: dict, path: str) -> str:
    # point at the first field whose range check fails
    checks = (
        ("battery_capacity_kwh", lambda v: v > 0),
        ("initial_soc", lambda v: 0.0 <= v <= 1.0),
        ("max_charge_rate_kw", lambda v: v > 0),
        ("plug_in_time_s", lambda v: v >= 0),
    )
    for name, ok in checks:
        v = d.get(name, 0.0 if name == "plug_in_time_s" else None)
        if isinstance(v, (int, float)) and not isinstance(v, bool) and not ok(float(v)):
            return f"{path}.{name}"
    return path


def _parse_evse(d: dict, path: str) -> EvseConfig:
    _expect(d, path, dict, "object")
    _check_keys(d, {"id", "max_power_kw", "location", "charge_status_timeout_s",
                    "heartbeat_interval_s"}, path)
    for req in ("id", "max_power_kw"):
        if req not in d:
            raise SchemaError(f"{path}.{req}", "required")
    try:
        return EvseConfig(
            id=_expect(d["id"], f"{path}.id", str, "string"),
            max_power_kw=_number(d["max_power_kw"], f"{path}.max_power_kw"),
            location=_expect(d.get("location", ""), f"{path}.location", str, "string"),
            charge_status_timeout_s=_number(
                d.get("charge_status_timeout_s", 2.0), f"{path}.charge_status_timeout_s"),
            heartbeat_interval_s=_number(
                d.get("heartbeat_interval_s", 1.0), f"{path}.heartbeat_interval_s"),
        )
    except ValueError as e:
        raise SchemaError(path, str(e)) from e


def _parse_csms(d: dict, path: str) -> CsmsPolicy:
    _expect(d, path, dict, "object")
    _check_keys(d, {"require_boot_first", "known_id_tokens", "allow_clear_cache",
                    "boot_shutdown_policy", "cert_latency_s", "strict_parsing"}, path)
    kwargs = {}
    if "require_boot_first" in d:
        kwargs["require_boot_first"] = _expect(d["require_boot_first"],
                                               f"{path}.require_boot_first", bool, "boolean")
    if "known_id_tokens" in d:
        tokens = _expect(d["known_id_tokens"], f"{path}.known_id_tokens", list, "array")
        kwargs["known_id_tokens"] = frozenset(
            _expect(t, f"{path}.known_id_tokens[{i}]", str, "string")
            for i, t in enumerate(tokens)
        )
    if "allow_clear_cache" in d:
        kwargs["allow_clear_cache"] = _expect(d["allow_clear_cache"],
                                              f"{path}.allow_clear_cache", bool, "boolean")
    if "boot_shutdown_policy" in d:
        raw = _expect(d["boot_shutdown_policy"], f"{path}.boot_shutdown_policy", str, "string")
        try:
            kwargs["boot_shutdown_policy"] = BootPolicy(raw)
        except ValueError:
            raise SchemaError(f"{path}.boot_shutdown_policy", f"unknown policy {raw!r}") from None
    if "cert_latency_s" in d:
        kwargs["cert_latency_s"] = _number(d["cert_latency_s"], f"{path}.cert_latency_s")
    if "strict_parsing" in d:
        kwargs["strict_parsing"] = _expect(d["strict_parsing"],
                                           f"{path}.strict_parsing", bool, "boolean")
    try:
        return CsmsPolicy(**kwargs)
    except ValueError as e:
        raise SchemaError(path, str(e)) from e


def _parse_attack(d: dict, path: str) -> AttackPlan:
    _expect(d, path, dict, "object")
    _check_keys(d, {"kind", "target_id", "start_s", "duration_s", "params"}, path)
    for req in ("kind", "target_id", "start_s"):
        if req not in d:
            raise SchemaError(f"{path}.{req}", "required")
    raw_kind = _expect(d["kind"], f"{path}.kind", str, "string")
    try:
        kind = AttackKind(raw_kind)
    except ValueError:
        raise SchemaError(f"{path}.kind", f"unknown attack kind {raw_kind!r}") from None
    params = d.get("params")
    if params is not None:
        _expect(params, f"{path}.params", dict, "object")
    try:
        return AttackPlan(
            kind=kind,
            target_id=_expect(d["target_id"], f"{path}.target_id", str, "string"),
            start_s=_number(d["start_s"], f"{path}.start_s"),
            duration_s=(
                None if d.get("duration_s") is None
                else _number(d["duration_s"], f"{path}.duration_s")
            ),
            params=params,
        )
    except ValueError as e:
        raise SchemaError(path, str(e)) from e


def _parse_sim(d: dict, path: str) -> SimParams:
    _expect(d, path, dict, "object")
    allowed = {"handshake_delay_s", "power_down_ramp_s", "power_sample_interval_s",
               "link_latency_s", "link_loss_prob", "link_rto_s", "link_max_retransmits"}
    _check_keys(d, allowed, path)
    kwargs = {}
    for key in allowed & set(d):
        if key == "link_max_retransmits":
            v = d[key]
            if isinstance(v, bool) or not isinstance(v, int):
                raise SchemaError(f"{path}.{key}", "expected integer")
            kwargs[key] = v
        else:
            kwargs[key] = _number(d[key], f"{path}.{key}")
    try:
        return SimParams(**kwargs)
    except ValueError as e:
        raise SchemaError(path, str(e)) from e


def parse_scenario(text: str) -> Scenario:
    """Parse a scenario document; strict about unknown keys, fills defaults."""
    try:
        doc = json.loads(text)
    except ValueError as e:
        raise ScenarioSyntaxError(str(e)) from e
    if not isinstance(doc, dict):
        raise SchemaError("$", "document must be a JSON object")
    _check_keys(doc, {"evs", "evses", "csms", "attacks", "schedule_end_s", "seed",
                      "baseline_load_profile", "sim"}, "")
    for req in ("evs", "evses"):
        if req not in doc:
            raise SchemaError(req, "required")

    evs = tuple(
        _parse_ev(e, f"evs[{i}]")
        for i, e in enumerate(_expect(doc["evs"], "evs", list, "array"))
    )
    evses = tuple(
        _parse_evse(e, f"evses[{i}]")
        for i, e in enumerate(_expect(doc["evses"], "evses", list, "array"))
    )
    csms = _parse_csms(doc.get("csms", {}), "csms")
    attacks = tuple(
        _parse_attack(a, f"attacks[{i}]")
        for i, a in enumerate(_expect(doc.get("attacks", []), "attacks", list, "array"))
    )

    schedule_end_s = _number(doc.get("schedule_end_s", DEFAULT_SCHEDULE_END_S), "schedule_end_s")
    if schedule_end_s <= 0:
        raise SchemaError("schedule_end_s", "must be positive")

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise SchemaError("seed", "expected integer")
    if not 0 <= seed <= MAX_SEED:
        raise SchemaError("seed", "must fit in 64 unsigned bits")

    profile = doc.get("baseline_load_profile", list(DEFAULT_BASELINE_MW))
    _expect(profile, "baseline_load_profile", list, "array")
    if len(profile) != 24:
        raise SchemaError("baseline_load_profile", "must have 24 hourly values")
    values = []
    for i, v in enumerate(profile):
        x = _number(v, f"baseline_load_profile[{i}]")
        if x < 0:
            raise SchemaError(f"baseline_load_profile[{i}]", "must be nonnegative")
        values.append(x)

    sim = _parse_sim(doc.get("sim", {}), "sim")

    return Scenario(
        evs=evs,
        evses=evses,
        csms=csms,
        attacks=attacks,
        schedule_end_s=schedule_end_s,
        seed=seed,
        baseline_load_profile=tuple(values),
        sim=sim,
    )


def serialize_scenario(s: Scenario) -> str:
    """Canonical JSON form; parse_scenario(serialize_scenario(s)) == s."""
    doc = {
        "evs": [
            {
                "id": ev.id,
                "battery_capacity_kwh": ev.battery_capacity_kwh,
                "initial_soc": ev.initial_soc,
                "max_charge_rate_kw": ev.max_charge_rate_kw,
                "plug_in_time_s": ev.plug_in_time_s,
                "target_evse": ev.target_evse,
                **({"interrupt_time_s": ev.interrupt_time_s}
                   if ev.interrupt_time_s is not None else {}),
            }
            for ev in s.evs
        ],
        "evses": [
            {
                "id": e.id,
                "max_power_kw": e.max_power_kw,
                "location": e.location,
                "charge_status_timeout_s": e.charge_status_timeout_s,
                "heartbeat_interval_s": e.heartbeat_interval_s,
            }
            for e in s.evses
        ],
        "csms": {
            "require_boot_first": s.csms.require_boot_first,
            "known_id_tokens": sorted(s.csms.known_id_tokens),
            "allow_clear_cache": s.csms.allow_clear_cache,
            "boot_shutdown_policy": s.csms.boot_shutdown_policy.value,
            "cert_latency_s": s.csms.cert_latency_s,
            "strict_parsing": s.csms.strict_parsing,
        },
        "attacks": [
            {
                "kind": a.kind.value,
                "target_id": a.target_id,
                "start_s": a.start_s,
                **({"duration_s": a.duration_s} if a.duration_s is not None else {}),
                **({"params": a.params} if a.params is not None else {}),
            }
            for a in s.attacks
        ],
        "schedule_end_s": s.schedule_end_s,
        "seed": s.seed,
        "baseline_load_profile": list(s.baseline_load_profile),
        "sim": {
            "handshake_delay_s": s.sim.handshake_delay_s,
            "power_down_ramp_s": s.sim.power_down_ramp_s,
            "power_sample_interval_s": s.sim.power_sample_interval_s,
            "link_latency_s": s.sim.link_latency_s,
            "link_loss_prob": s.sim.link_loss_prob,
            "link_rto_s": s.sim.link_rto_s,
            "link_max_retransmits": s.sim.link_max_retransmits,
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def validate_scenario(s: Scenario) -> list[Violation]:
    """Cross-reference and invariant checks; violations are returned, not raised."""
    out: list[Violation] = []

    seen_ev = set()
    for i, ev in enumerate(s.evs):
        if ev.id in seen_ev:
            out.append(Violation(f"evs[{i}].id", f"duplicate EV id {ev.id!r}"))
        seen_ev.add(ev.id)
    seen_evse = set()
    for i, e in enumerate(s.evses):
        if e.id in seen_evse:
            out.append(Violation(f"evses[{i}].id", f"duplicate EVSE id {e.id!r}"))
        seen_evse.add(e.id)

    evse_ids = {e.id for e in s.evses}
    for i, ev in enumerate(s.evs):
        if ev.target_evse not in evse_ids:
            out.append(Violation(
                f"evs[{i}].target_evse", f"unresolved EVSE id {ev.target_evse!r}"))

    by_slot: dict[tuple[str, float], list[str]] = {}
    for ev in s.evs:
        by_slot.setdefault((ev.target_evse, ev.plug_in_time_s), []).append(ev.id)
    for (evse_id, t), ids in sorted(by_slot.items()):
        if len(ids) > 1:
            out.append(Violation(
                "evs",
                f"EVs {', '.join(sorted(ids))} target EVSE {evse_id!r} at the same "
                f"plug-in time {t}",
            ))

    if s.schedule_end_s <= 0:
        out.append(Violation("schedule_end_s", "must be positive"))
    if not 0 <= s.seed <= MAX_SEED:
        out.append(Violation("seed", "must fit in 64 unsigned bits"))
    if len(s.baseline_load_profile) != 24:
        out.append(Violation("baseline_load_profile", "must have 24 hourly values"))
    elif any(v < 0 for v in s.baseline_load_profile):
        out.append(Violation("baseline_load_profile", "values must be nonnegative"))

    link_ids = set(s.link_ids())
    for i, plan in enumerate(s.attacks):
        path = f"attacks[{i}]"
        if plan.kind is AttackKind.BROKEN_WIRE_L1:
            if plan.target_id not in link_ids:
                out.append(Violation(f"{path}.target_id",
                                     f"unresolved link id {plan.target_id!r}"))
        elif plan.kind is AttackKind.BROKEN_WIRE_L3:
            if plan.target_id != ALL_EVSES and plan.target_id not in evse_ids:
                out.append(Violation(f"{path}.target_id",
                                     f"unresolved EVSE id {plan.target_id!r}"))
            if plan.duration_s is None:
                out.append(Violation(f"{path}.duration_s", "required for broken-wire-l3"))
            try:
                parse_power_params(plan.params)
            except ValueError as e:
                out.append(Violation(f"{path}.params", str(e)))
        elif plan.kind is AttackKind.FUZZIFICATION:
            if plan.target_id != CSMS_TARGET:
                out.append(Violation(f"{path}.target_id",
                                     f"must be {CSMS_TARGET!r} for fuzzification"))
            try:
                parse_fuzz_plan(plan.params, s.seed)
            except ValueError as e:
                out.append(Violation(f"{path}.params", str(e)))
    return out
