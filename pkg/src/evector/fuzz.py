"""Grammar-based OCPP fuzzer: payload generation, mutation, campaigns, outcomes.

Payloads are generated from the same schemas the validator enforces, so an
unmutated message always validates. Five mutation modes cover the outcome
space: dropped required fields, wrong primitive types, out-of-range enums,
unknown fields, and truncated (unparseable) frames.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .model import SimTime
from .ocpp import (
    ACTION_GROUPS,
    ALL_ACTIONS,
    Call,
    CallError,
    CallResult,
    CsmsPolicy,
    CsmsState,
    OcppAction,
    csms_handle_raw,
    csms_restart,
    encode_frame,
    load_schema,
)
from .seeding import derive_rng


class MutationMode(str, Enum):
    NONE = "none"
    DROP_REQUIRED = "drop-required"
    WRONG_TYPE = "wrong-type"
    ENUM_OUT_OF_RANGE = "enum-out-of-range"
    UNKNOWN_FIELD = "unknown-field"
    TRUNCATE_JSON = "truncate-json"


class FuzzStrategy(str, Enum):
    RANDOM = "random"
    STATE_BASED = "state-based"


class Unclassifiable(Exception):
    """The CSMS answered a CALL with a CALL; a protocol violation on its side."""


@dataclass(frozen=True)
class FuzzPlan:
    strategy: FuzzStrategy
    repetitions: int = 100
    actions: tuple = ALL_ACTIONS
    mutation_modes: tuple = (MutationMode.NONE,)
    injection_points: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.actions:
            raise ValueError("actions must be non-empty")
        if not self.mutation_modes:
            raise ValueError("mutation_modes must be non-empty")


@dataclass(frozen=True)
class OutcomeCode:
    """(wire type, bucket) classification pair; buckets 1-4 accept, 5-7 reject."""

    wire_type: int
    bucket: int

    def __post_init__(self):
        if self.bucket in (1, 2, 3, 4):
            if self.wire_type != 3:
                raise ValueError("buckets 1-4 require wire type 3")
        elif self.bucket in (5, 6, 7):
            if self.wire_type != 4:
                raise ValueError("buckets 5-7 require wire type 4")
        else:
            raise ValueError(f"bucket out of range: {self.bucket}")

    def as_tuple(self) -> tuple[int, int]:
        return (self.wire_type, self.bucket)

    def __str__(self) -> str:
        return f"({self.wire_type},{self.bucket})"


ACCEPTED_CLEAN = OutcomeCode(3, 1)
ACCEPTED_NOT_IMPLEMENTED = OutcomeCode(3, 2)
ACCEPTED_JSON_PARSE = OutcomeCode(3, 3)
SERVER_STOPPED = OutcomeCode(3, 4)
REJECTED_FORMAT = OutcomeCode(4, 5)
REJECTED_NONEXISTENT = OutcomeCode(4, 6)
REJECTED_UNPROCESSABLE = OutcomeCode(4, 7)

ALL_OUTCOMES = (
    ACCEPTED_CLEAN,
    ACCEPTED_NOT_IMPLEMENTED,
    ACCEPTED_JSON_PARSE,
    SERVER_STOPPED,
    REJECTED_FORMAT,
    REJECTED_NONEXISTENT,
    REJECTED_UNPROCESSABLE,
)


@dataclass(frozen=True)
class FuzzRecord:
    seq: int
    action: str
    mutation: MutationMode
    sent: bytes
    outcome: OutcomeCode
    latency_s: float
    server_alive_after: bool


# ---------------------------------------------------------------------------
# payload generation

TOKEN_POOL = tuple(f"TAG-{i:03d}" for i in range(1, 9))

# chance that an optional schema field is present in a generated payload
OPTIONAL_FIELD_PROB = 0.34

_WORDS = ("delta", "ion", "volt", "amp", "flux", "node", "grid", "cell")


def _gen_string(schema: dict, path: str, rng: random.Random) -> str:
    if "enum" in schema:
        return rng.choice(schema["enum"])
    if path.endswith(".idToken.idToken"):
        return rng.choice(TOKEN_POOL)
    if schema.get("format") == "date-time":
        day = rng.randrange(1, 28)
        return f"2025-01-{day:02d}T{rng.randrange(24):02d}:{rng.randrange(60):02d}:00Z"
    s = f"{rng.choice(_WORDS)}-{rng.randrange(0xFFFF):04x}"
    limit = schema.get("maxLength")
    return s[:limit] if limit else s


def _gen_value(schema: dict, path: str, rng: random.Random):
    typ = schema.get("type", "object")
    if typ == "object":
        out = {}
        props = schema.get("properties", {})
        required = set(schema.get("required", []))
        for key, sub in props.items():
            if key in required or rng.random() < OPTIONAL_FIELD_PROB:
                out[key] = _gen_value(sub, f"{path}.{key}", rng)
        return out
    if typ == "string":
        return _gen_string(schema, path, rng)
    if typ == "integer":
        return rng.randrange(0, 100)
    if typ == "number":
        return round(rng.uniform(0.0, 100.0), 3)
    if typ == "boolean":
        return rng.random() < 0.5
    if typ == "array":
        items = schema.get("items", {"type": "string"})
        return [_gen_value(items, f"{path}[{i}]", rng) for i in range(rng.randrange(1, 3))]
    raise ValueError(f"cannot generate for schema type {typ}")


def _required_paths(schema: dict, prefix: str = "") -> list[str]:
    paths = []
    if schema.get("type", "object") == "object":
        props = schema.get("properties", {})
        for req in schema.get("required", []):
            paths.append(f"{prefix}.{req}")
            paths.extend(_required_paths(props.get(req, {}), f"{prefix}.{req}"))
    return paths


def _enum_paths(schema: dict, prefix: str = "") -> list[str]:
    paths = []
    typ = schema.get("type", "object")
    if typ == "object":
        for key, sub in schema.get("properties", {}).items():
            paths.extend(_enum_paths(sub, f"{prefix}.{key}"))
    elif "enum" in schema:
        paths.append(prefix)
    return paths


def _walk_set(payload: dict, path: str, value, *, delete: bool = False) -> None:
    parts = path.lstrip(".").split(".")
    node = payload
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    if delete:
        node.pop(parts[-1], None)
    else:
        node[parts[-1]] = value


def _mutate(payload: dict, action: str, mode: MutationMode, rng: random.Random) -> dict:
    schema = load_schema(action)
    if mode is MutationMode.DROP_REQUIRED:
        required = _required_paths(schema)
        if not required:
            mode = MutationMode.UNKNOWN_FIELD
        else:
            _walk_set(payload, rng.choice(required), None, delete=True)
            return payload
    if mode is MutationMode.WRONG_TYPE:
        required = _required_paths(schema)
        if not required:
            mode = MutationMode.UNKNOWN_FIELD
        else:
            _walk_set(payload, rng.choice(required), 1234567)
            return payload
    if mode is MutationMode.ENUM_OUT_OF_RANGE:
        enums = _enum_paths(schema)
        if not enums:
            mode = MutationMode.UNKNOWN_FIELD
        else:
            _walk_set(payload, rng.choice(enums), f"NotA{rng.choice(_WORDS).title()}")
            return payload
    if mode is MutationMode.UNKNOWN_FIELD:
        payload[f"x_{rng.choice(_WORDS)}"] = rng.randrange(1000)
        return payload
    return payload


def gen_message(action, mode: MutationMode, rng: random.Random) -> bytes:
    """One OCPP CALL for the action, mutated per mode; NONE always validates."""
    name = action.value if isinstance(action, OcppAction) else str(action)
    message_id = f"m{rng.randrange(16 ** 8):08x}"
    payload = _gen_value(load_schema(name), "", rng)
    if mode not in (MutationMode.NONE, MutationMode.TRUNCATE_JSON):
        payload = _mutate(payload, name, mode, rng)
    raw = encode_frame(Call(message_id, name, payload))
    if mode is MutationMode.TRUNCATE_JSON:
        # any proper prefix leaves the top-level array unclosed
        return raw[: rng.randrange(1, len(raw))]
    return raw


# ---------------------------------------------------------------------------
# classification

FORMAT_SECURITY_CODES = frozenset({
    "FormationViolation",
    "FormatViolation",
    "ProtocolError",
    "SecurityError",
    "PropertyConstraintViolation",
    "OccurrenceConstraintViolation",
    "TypeConstraintViolation",
    "RpcFrameworkError",
})

NONEXISTENT_CODES = frozenset({
    "NotImplemented",
    "NotSupported",
    "NotFound",
    "UnknownComponent",
    "UnknownVariable",
})

_INTERMEDIATE_MARKERS = frozenset({"UnknownVendorId", "UnknownMessageId", "NotImplemented"})


def classify(
    sent: bytes,
    response: Call | CallResult | CallError | None,
    latency_s: float,
    server_alive_after: bool,
) -> OutcomeCode:
    """Map one exchange to its outcome code.

    Rejections (CALLERROR) classify by error-code family. Accepted sends with a
    dead server afterwards are the server-stopped bucket; a silent but live
    server counts as unprocessable.
    """
    if isinstance(response, Call):
        raise Unclassifiable("CSMS sent a CALL in response")
    if isinstance(response, CallError):
        if response.error_code in FORMAT_SECURITY_CODES:
            return REJECTED_FORMAT
        if response.error_code in NONEXISTENT_CODES:
            return REJECTED_NONEXISTENT
        return REJECTED_UNPROCESSABLE
    if not server_alive_after:
        return SERVER_STOPPED
    if response is None:
        return REJECTED_UNPROCESSABLE
    payload = response.payload
    err = payload.get("error")
    if err == "JsonParse":
        return ACCEPTED_JSON_PARSE
    if err == "NotImplemented":
        return ACCEPTED_NOT_IMPLEMENTED
    if payload.get("status") in _INTERMEDIATE_MARKERS:
        return ACCEPTED_NOT_IMPLEMENTED
    token_info = payload.get("idTokenInfo")
    if isinstance(token_info, dict) and token_info.get("status") != "Accepted":
        return ACCEPTED_NOT_IMPLEMENTED
    return ACCEPTED_CLEAN


# ---------------------------------------------------------------------------
# campaigns

def _draw_mode(plan: FuzzPlan, rng: random.Random) -> MutationMode:
    if len(plan.mutation_modes) == 1:
        return plan.mutation_modes[0]
    return rng.choice(plan.mutation_modes)


def fuzz_exchange(
    st: CsmsState,
    policy: CsmsPolicy,
    seq: int,
    action,
    mode: MutationMode,
    rng: random.Random,
    now: SimTime,
) -> FuzzRecord:
    """Send one (possibly mutated) message and classify the outcome."""
    raw = gen_message(action, mode, rng)
    st, response, latency = csms_handle_raw(st, policy, raw, now)
    outcome = classify(raw, response, latency, st.alive)
    name = action.value if isinstance(action, OcppAction) else str(action)
    return FuzzRecord(
        seq=seq,
        action=name,
        mutation=mode,
        sent=raw,
        outcome=outcome,
        latency_s=latency,
        server_alive_after=st.alive,
    )


def _campaign_order(plan: FuzzPlan) -> list:
    if plan.strategy is FuzzStrategy.RANDOM:
        multiset = [a for a in plan.actions for _ in range(plan.repetitions)]
        rng = derive_rng(plan.seed, "fuzz-order")
        rng.shuffle(multiset)
        return multiset
    wanted = set(plan.actions)
    sequence = [a for group in ACTION_GROUPS.values() for a in group if a in wanted]
    return sequence * plan.repetitions


def iter_campaign(plan: FuzzPlan, st: CsmsState, policy: CsmsPolicy):
    """Yield FuzzRecords in campaign order, restarting the CSMS after a stop."""
    order = _campaign_order(plan)
    gen_rng = derive_rng(plan.seed, "fuzz-gen")
    mode_rng = derive_rng(plan.seed, "fuzz-mode")
    seq_len = len(order) // plan.repetitions if plan.strategy is FuzzStrategy.STATE_BASED else 0
    injection = set(plan.injection_points)
    t = 0.0
    for seq, action in enumerate(order):
        if not st.alive:
            csms_restart(st)
        if plan.strategy is FuzzStrategy.STATE_BASED:
            mode = (
                _draw_mode(plan, mode_rng)
                if (seq % seq_len) in injection
                else MutationMode.NONE
            )
        else:
            mode = _draw_mode(plan, mode_rng)
        rec = fuzz_exchange(st, policy, seq, action, mode, gen_rng, SimTime(t, seq))
        t += rec.latency_s
        yield rec


def run_random_fuzz(plan: FuzzPlan, st: CsmsState, policy: CsmsPolicy) -> list[FuzzRecord]:
    """Unordered campaign: every action repeated `repetitions` times, shuffled."""
    if plan.strategy is not FuzzStrategy.RANDOM:
        raise ValueError("plan.strategy must be random")
    return list(iter_campaign(plan, st, policy))


def run_state_fuzz(plan: FuzzPlan, st: CsmsState, policy: CsmsPolicy) -> list[FuzzRecord]:
    """Group-ordered campaign with mutations only at the injection points."""
    if plan.strategy is not FuzzStrategy.STATE_BASED:
        raise ValueError("plan.strategy must be state-based")
    return list(iter_campaign(plan, st, policy))


# ---------------------------------------------------------------------------
# summary table

BUCKET_COLUMNS = (
    (3, 1), (3, 2), (3, 3), (3, 4), (4, 5), (4, 6), (4, 7),
)


def summarize_fuzz(records: list[FuzzRecord]) -> list[dict]:
    """Per-action outcome percentages plus mean latency, in canonical action order."""
    by_action: dict[str, list[FuzzRecord]] = {}
    for rec in records:
        by_action.setdefault(rec.action, []).append(rec)
    canonical = [a.value for a in ALL_ACTIONS if a.value in by_action]
    extra = sorted(set(by_action) - set(canonical))
    rows = []
    for name in canonical + extra:
        group = by_action[name]
        n = len(group)
        row = {"action": name}
        for wire, bucket in BUCKET_COLUMNS:
            hits = sum(1 for r in group if r.outcome.as_tuple() == (wire, bucket))
            row[f"pct_{wire}_{bucket}"] = 100.0 * hits / n
        row["mean_latency_ms"] = 1000.0 * sum(r.latency_s for r in group) / n
        rows.append(row)
    return rows


def fuzz_summary_csv(rows: list[dict]) -> str:
    cols = [f"pct_{w}_{b}" for w, b in BUCKET_COLUMNS]
    lines = ["action," + ",".join(cols) + ",mean_latency_ms"]
    for row in rows:
        pcts = ",".join(f"{row[c]:.1f}" for c in cols)
        lines.append(f"{row['action']},{pcts},{row['mean_latency_ms']:.1f}")
    return "\n".join(lines) + "\n"
