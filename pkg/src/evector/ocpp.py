"""OCPP-J 2.0.1 wire framing, payload validation and a stateful reference CSMS.

Frames are JSON arrays: [2, id, action, payload] for requests, [3, id, payload]
for results, [4, id, code, description, details] for errors. The reference CSMS
implements a fixed behavior table per action with deterministic latencies, so
campaign statistics are reproducible from the seed alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from importlib import resources

from .model import SimTime

CALL = 2
CALLRESULT = 3
CALLERROR = 4

MAX_MESSAGE_ID_LEN = 36


class OcppAction(str, Enum):
    HEARTBEAT = "Heartbeat"
    AUTHORIZE = "AuthorizeReq"
    BOOT_NOTIFICATION = "BootNotification"
    CLEAR_CACHE = "ClearCacheReq"
    FIRMWARE_STATUS_NOTIFICATION = "FirmwareStatusNotification"
    DATA_TRANSFER = "DataTransferReq"
    GET_15118_EV_CERTIFICATE = "Get15118EVCertificateReq"
    NOTIFY_CUSTOMER_INFORMATION = "NotifyCustomerInformation"
    STATUS_NOTIFICATION = "StatusNotificationReq"
    PUBLISH_FIRMWARE_STATUS_NOTIFICATION = "PublishFirmwareStatusNotificationReq"


ALL_ACTIONS = tuple(OcppAction)

# functional groups in the order a real charging station would exercise them
ACTION_GROUPS = {
    "start-up": (
        OcppAction.BOOT_NOTIFICATION,
        OcppAction.FIRMWARE_STATUS_NOTIFICATION,
        OcppAction.CLEAR_CACHE,
    ),
    "operational": (
        OcppAction.HEARTBEAT,
        OcppAction.STATUS_NOTIFICATION,
    ),
    "user-interaction": (
        OcppAction.AUTHORIZE,
        OcppAction.GET_15118_EV_CERTIFICATE,
        OcppAction.NOTIFY_CUSTOMER_INFORMATION,
    ),
    "firmware-custom": (
        OcppAction.PUBLISH_FIRMWARE_STATUS_NOTIFICATION,
        OcppAction.DATA_TRANSFER,
    ),
}


class MalformedJson(Exception):
    """Bytes that do not decode to a structurally valid OCPP-J frame."""


@dataclass(frozen=True)
class Call:
    message_id: str
    action: str
    payload: dict


@dataclass(frozen=True)
class CallResult:
    message_id: str
    payload: dict
    # classifier ground truth carried in telemetry only, never on the wire
    hint: str | None = field(default=None, compare=False)


@dataclass(frozen=True)
class CallError:
    message_id: str
    error_code: str
    error_description: str
    error_details: dict
    hint: str | None = field(default=None, compare=False)


OcppFrame = Call | CallResult | CallError


def _check_message_id(mid) -> str:
    if not isinstance(mid, str) or not mid or len(mid) > MAX_MESSAGE_ID_LEN:
        raise MalformedJson(f"bad message id: {mid!r}")
    return mid


def encode_frame(f: OcppFrame) -> bytes:
    """Canonical UTF-8 JSON array form of a frame."""
    if isinstance(f, Call):
        arr = [CALL, f.message_id, f.action, f.payload]
    elif isinstance(f, CallResult):
        arr = [CALLRESULT, f.message_id, f.payload]
    elif isinstance(f, CallError):
        arr = [CALLERROR, f.message_id, f.error_code, f.error_description, f.error_details]
    else:
        raise TypeError(f"not a frame: {f!r}")
    return json.dumps(arr, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_frame(raw: bytes) -> OcppFrame:
    """Inverse of encode_frame; raises MalformedJson on anything else."""
    try:
        arr = json.loads(raw.decode("utf-8") if isinstance(raw, (bytes, bytearray)) else raw)
    except (ValueError, UnicodeDecodeError) as e:
        raise MalformedJson(str(e)) from e
    if not isinstance(arr, list) or not arr:
        raise MalformedJson("frame is not a JSON array")
    type_id = arr[0]
    if type_id == CALL:
        if len(arr) != 4:
            raise MalformedJson("CALL must have 4 elements")
        mid = _check_message_id(arr[1])
        if not isinstance(arr[2], str) or not isinstance(arr[3], dict):
            raise MalformedJson("CALL needs a string action and object payload")
        return Call(mid, arr[2], arr[3])
    if type_id == CALLRESULT:
        if len(arr) != 3 or not isinstance(arr[2], dict):
            raise MalformedJson("CALLRESULT must be [3,id,payload]")
        return CallResult(_check_message_id(arr[1]), arr[2])
    if type_id == CALLERROR:
        if len(arr) != 5 or not isinstance(arr[2], str) or not isinstance(arr[3], str) \
                or not isinstance(arr[4], dict):
            raise MalformedJson("CALLERROR must be [4,id,code,description,details]")
        return CallError(_check_message_id(arr[1]), arr[2], arr[3], arr[4])
    raise MalformedJson(f"bad type id: {type_id!r}")


# ---------------------------------------------------------------------------
# payload validation

VALID = "valid"
FORMAT_VIOLATION = "format-violation"
UNKNOWN_ACTION = "unknown-action"
MALFORMED_JSON = "malformed-json"


@dataclass(frozen=True)
class ValidationResult:
    kind: str
    path: str | None = None
    reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.kind == VALID


_SCHEMA_CACHE: dict[str, dict] = {}


def load_schema(action: str) -> dict:
    if action not in _SCHEMA_CACHE:
        ref = resources.files("evector").joinpath(f"schemas/{action}.json")
        _SCHEMA_CACHE[action] = json.loads(ref.read_text(encoding="utf-8"))
    return _SCHEMA_CACHE[action]


def _check_node(value, schema: dict, path: str) -> ValidationResult | None:
    typ = schema.get("type", "object")
    if typ == "object":
        if not isinstance(value, dict):
            return ValidationResult(FORMAT_VIOLATION, path or ".", "type")
        props = schema.get("properties", {})
        for req in schema.get("required", []):
            if req not in value:
                return ValidationResult(FORMAT_VIOLATION, f"{path}.{req}", "required")
        for key, sub in value.items():
            if key not in props:
                return ValidationResult(FORMAT_VIOLATION, f"{path}.{key}", "unknown-field")
            bad = _check_node(sub, props[key], f"{path}.{key}")
            if bad:
                return bad
        return None
    if typ == "string":
        if not isinstance(value, str):
            return ValidationResult(FORMAT_VIOLATION, path, "type")
        if "enum" in schema and value not in schema["enum"]:
            return ValidationResult(FORMAT_VIOLATION, path, "enum")
        if "maxLength" in schema and len(value) > schema["maxLength"]:
            return ValidationResult(FORMAT_VIOLATION, path, "maxLength")
        return None
    if typ == "integer":
        if not isinstance(value, int) or isinstance(value, bool):
            return ValidationResult(FORMAT_VIOLATION, path, "type")
        return None
    if typ == "number":
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            return ValidationResult(FORMAT_VIOLATION, path, "type")
        return None
    if typ == "boolean":
        if not isinstance(value, bool):
            return ValidationResult(FORMAT_VIOLATION, path, "type")
        return None
    if typ == "array":
        if not isinstance(value, list):
            return ValidationResult(FORMAT_VIOLATION, path, "type")
        items = schema.get("items")
        if items:
            for i, item in enumerate(value):
                bad = _check_node(item, items, f"{path}[{i}]")
                if bad:
                    return bad
        return None
    raise ValueError(f"schema node with unknown type: {typ}")


def validate_payload(action: str, payload) -> ValidationResult:
    """Check a payload against the action's shipped schema. Total: never raises."""
    try:
        schema = load_schema(str(action.value if isinstance(action, OcppAction) else action))
    except FileNotFoundError:
        return ValidationResult(UNKNOWN_ACTION, reason=str(action))
    bad = _check_node(payload, schema, "")
    return bad if bad else ValidationResult(VALID)


# ---------------------------------------------------------------------------
# reference CSMS

class BootPolicy(str, Enum):
    SHUTDOWN_ON_BOOT = "shutdown-on-boot"
    ACCEPT_BOOT = "accept-boot"


DEFAULT_KNOWN_TOKENS = frozenset(f"TAG-{i:03d}" for i in range(1, 9))

# per-action response latency in seconds; certificate latency comes from policy
ACTION_LATENCY_S = {
    OcppAction.HEARTBEAT: 0.010,
    OcppAction.AUTHORIZE: 0.011,
    OcppAction.BOOT_NOTIFICATION: 0.048,
    OcppAction.CLEAR_CACHE: 0.003,
    OcppAction.FIRMWARE_STATUS_NOTIFICATION: 0.026,
    OcppAction.DATA_TRANSFER: 0.008,
    OcppAction.NOTIFY_CUSTOMER_INFORMATION: 0.008,
    OcppAction.STATUS_NOTIFICATION: 0.016,
    OcppAction.PUBLISH_FIRMWARE_STATUS_NOTIFICATION: 0.010,
}

UNKNOWN_INPUT_LATENCY_S = 0.005

# one in CLEAR_CACHE_INTERNAL_EVERY pre-boot cache clears trips an internal error,
# deterministically, so a 100-shot campaign lands on a 92/8 split
CLEAR_CACHE_INTERNAL_EVERY = 12

_EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


def _current_time(now: SimTime) -> str:
    return (_EPOCH + timedelta(seconds=now.seconds)).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class CsmsPolicy:
    require_boot_first: bool = True
    known_id_tokens: frozenset = DEFAULT_KNOWN_TOKENS
    allow_clear_cache: bool = False
    boot_shutdown_policy: BootPolicy = BootPolicy.SHUTDOWN_ON_BOOT
    cert_latency_s: float = 0.573
    strict_parsing: bool = False

    def __post_init__(self):
        if self.cert_latency_s < 0:
            raise ValueError("cert_latency_s must be nonnegative")


@dataclass
class CsmsState:
    booted: bool = False
    alive: bool = True
    cache: dict = field(default_factory=dict)
    token_registry: set = field(default_factory=set)
    request_log: list = field(default_factory=list)
    clear_cache_seen: int = 0


def csms_restart(st: CsmsState) -> CsmsState:
    """Bring a stopped server back; audit trail and rejection counter survive."""
    st.alive = True
    st.booted = False
    st.cache = {}
    return st


def csms_handle(
    st: CsmsState, policy: CsmsPolicy, f: Call, now: SimTime
) -> tuple[CsmsState, CallResult | CallError | None, float]:
    """Process one CALL per the behavior table; dead servers stay silent."""
    if not st.alive:
        return st, None, 0.0
    st.request_log.append((now, f.action))

    check = validate_payload(f.action, f.payload)
    if check.kind == UNKNOWN_ACTION:
        resp = CallError(f.message_id, "NotImplemented", f"unknown action {f.action}",
                         {"action": f.action}, hint="4,6")
        return st, resp, UNKNOWN_INPUT_LATENCY_S

    action = OcppAction(f.action)
    latency = (
        policy.cert_latency_s
        if action is OcppAction.GET_15118_EV_CERTIFICATE
        else ACTION_LATENCY_S[action]
    )

    if not check.ok:
        resp = CallError(f.message_id, "FormationViolation", check.reason or "invalid",
                         {"path": check.path or ""}, hint="4,5")
        return st, resp, latency

    if action is OcppAction.HEARTBEAT:
        return st, CallResult(f.message_id, {"currentTime": _current_time(now)}, hint="3,1"), latency

    if action is OcppAction.AUTHORIZE:
        token = f.payload["idToken"]["idToken"]
        recognized = (
            (st.booted or not policy.require_boot_first)
            and token in policy.known_id_tokens
        )
        if recognized:
            st.token_registry.add(token)
            payload = {"idTokenInfo": {"status": "Accepted"}}
            return st, CallResult(f.message_id, payload, hint="3,1"), latency
        payload = {"idTokenInfo": {"status": "Unknown"}}
        return st, CallResult(f.message_id, payload, hint="3,2"), latency

    if action is OcppAction.BOOT_NOTIFICATION:
        payload = {"currentTime": _current_time(now), "interval": 300, "status": "Accepted"}
        if policy.boot_shutdown_policy is BootPolicy.SHUTDOWN_ON_BOOT:
            st.alive = False
            return st, CallResult(f.message_id, payload, hint="3,4"), latency
        st.booted = True
        return st, CallResult(f.message_id, payload, hint="3,1"), latency

    if action is OcppAction.CLEAR_CACHE:
        if policy.allow_clear_cache:
            st.cache = {}
            return st, CallResult(f.message_id, {"status": "Accepted"}, hint="3,1"), latency
        if not st.booted:
            st.clear_cache_seen += 1
            if st.clear_cache_seen % CLEAR_CACHE_INTERNAL_EVERY == 0:
                resp = CallError(f.message_id, "InternalError", "cache backend unavailable",
                                 {}, hint="4,7")
                return st, resp, latency
        resp = CallError(f.message_id, "SecurityError", "cache manipulation rejected",
                         {}, hint="4,5")
        return st, resp, latency

    if action is OcppAction.DATA_TRANSFER:
        return st, CallResult(f.message_id, {"status": "UnknownVendorId"}, hint="3,2"), latency

    if action is OcppAction.GET_15118_EV_CERTIFICATE:
        payload = {"status": "Accepted", "exiResponse": "", "error": "JsonParse"}
        return st, CallResult(f.message_id, payload, hint="3,3"), latency

    if action is OcppAction.PUBLISH_FIRMWARE_STATUS_NOTIFICATION:
        if isinstance(f.payload.get("location"), list):
            payload = {"status": "Accepted", "error": "NotImplemented"}
            return st, CallResult(f.message_id, payload, hint="3,2"), latency
        resp = CallError(f.message_id, "FormationViolation", "location list required",
                         {"path": ".location"}, hint="4,5")
        return st, resp, latency

    # FirmwareStatusNotification, NotifyCustomerInformation, StatusNotificationReq
    return st, CallResult(f.message_id, {}, hint="3,1"), latency


def csms_handle_raw(
    st: CsmsState, policy: CsmsPolicy, raw: bytes, now: SimTime
) -> tuple[CsmsState, CallResult | CallError | None, float]:
    """Wire entry point: undecodable bytes split on the strict_parsing toggle."""
    if not st.alive:
        return st, None, 0.0
    try:
        frame = decode_frame(raw)
    except MalformedJson as e:
        if policy.strict_parsing:
            resp = CallError("-1", "FormationViolation", str(e), {}, hint="4,5")
        else:
            resp = CallResult("-1", {"status": "Accepted", "error": "JsonParse"}, hint="3,3")
        return st, resp, UNKNOWN_INPUT_LATENCY_S
    if not isinstance(frame, Call):
        resp = CallError(frame.message_id, "RpcFrameworkError",
                         "only CALL accepted here", {}, hint="4,5")
        return st, resp, UNKNOWN_INPUT_LATENCY_S
    return csms_handle(st, policy, frame, now)
