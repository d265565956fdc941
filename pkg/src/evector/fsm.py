"""Six-state charging session machine with the application message loop.

State walk: Unmated -> Mated -> Initialize -> Check -> Charge -> PowerDown -> Unmated.
Each handshake state completes with one request/response round trip; the Charge
state runs a periodic status heartbeat whose missing response tears the session
down after the configured timeout. Faults step the session backwards
(recoverable), terminate it (abort) or cut it off immediately (emergency).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from .model import BatteryState, EvConfig, EvseConfig, SimTime, battery_step
from .telemetry import TelemetryRecord


class SessionState(str, Enum):
    UNMATED = "unmated"
    MATED = "mated"
    INITIALIZE = "initialize"
    CHECK = "check"
    CHARGE = "charge"
    POWER_DOWN = "power-down"


class MsgKind(str, Enum):
    SESSION_SETUP_REQ = "SessionSetupReq"
    SESSION_SETUP_RES = "SessionSetupRes"
    CABLE_CHECK_REQ = "CableCheckReq"
    CABLE_CHECK_RES = "CableCheckRes"
    POWER_DELIVERY_REQ = "PowerDeliveryReq"
    POWER_DELIVERY_RES = "PowerDeliveryRes"
    CHARGING_STATUS_REQ = "ChargingStatusReq"
    CHARGING_STATUS_RES = "ChargingStatusRes"
    SESSION_STOP_REQ = "SessionStopReq"
    SESSION_STOP_RES = "SessionStopRes"


REQ_KINDS = frozenset(k for k in MsgKind if k.value.endswith("Req"))
RES_KINDS = frozenset(k for k in MsgKind if k.value.endswith("Res"))


class FaultSeverity(str, Enum):
    RECOVERABLE = "recoverable"
    ABORT = "abort"
    EMERGENCY = "emergency"


class EventKind(str, Enum):
    PLUG_IN = "plug-in"
    PLUG_OUT = "plug-out"
    MSG_ARRIVED = "msg-arrived"
    TIMEOUT = "timeout"
    FAULT_RAISED = "fault-raised"
    SOC_FULL = "soc-full"
    USER_INTERRUPT = "user-interrupt"


@dataclass(frozen=True)
class V2gMessage:
    kind: MsgKind
    session_id: str
    payload: dict


@dataclass(frozen=True)
class SessionEvent:
    kind: EventKind
    msg: V2gMessage | None = None
    fault_code: str | None = None
    severity: FaultSeverity | None = None

    @classmethod
    def plug_out(cls):
        return cls(EventKind.PLUG_OUT)

    @classmethod
    def msg_arrived(cls, msg: V2gMessage):
        return cls(EventKind.MSG_ARRIVED, msg=msg)

    @classmethod
    def timeout(cls):
        return cls(EventKind.TIMEOUT)

    @classmethod
    def fault(cls, code: str, severity: FaultSeverity):
        return cls(EventKind.FAULT_RAISED, fault_code=code, severity=severity)

    @classmethod
    def soc_full(cls):
        return cls(EventKind.SOC_FULL)

    @classmethod
    def user_interrupt(cls):
        return cls(EventKind.USER_INTERRUPT)


@dataclass(frozen=True)
class SessionParams:
    charge_status_timeout_s: float = 2.0
    state_timeout_s: float = 2.0
    handshake_delay_s: float = 0.2
    power_down_ramp_s: float = 5.0


@dataclass(frozen=True)
class ChargingSession:
    id: str
    ev_id: str
    evse_id: str
    state: SessionState
    state_entered_at: SimTime
    max_kw: float
    params: SessionParams
    awaiting: tuple[MsgKind, SimTime] | None = None
    awaiting_token: int = 0
    delivered_kw: float = 0.0
    error_flag: str | None = None
    # virtual second up to which battery energy has been integrated
    charged_to_s: float = 0.0


class EvseOccupied(Exception):
    pass


class IllegalEvent(Exception):
    """Event not in the transition table for the current state; a simulator bug."""


# request each state issues, and the response that completes it
REQ_FOR_STATE = {
    SessionState.MATED: MsgKind.SESSION_SETUP_REQ,
    SessionState.INITIALIZE: MsgKind.CABLE_CHECK_REQ,
    SessionState.CHECK: MsgKind.POWER_DELIVERY_REQ,
    SessionState.CHARGE: MsgKind.CHARGING_STATUS_REQ,
    SessionState.POWER_DOWN: MsgKind.SESSION_STOP_REQ,
}

RES_FOR_STATE = {
    SessionState.MATED: MsgKind.SESSION_SETUP_RES,
    SessionState.INITIALIZE: MsgKind.CABLE_CHECK_RES,
    SessionState.CHECK: MsgKind.POWER_DELIVERY_RES,
    SessionState.CHARGE: MsgKind.CHARGING_STATUS_RES,
    SessionState.POWER_DOWN: MsgKind.SESSION_STOP_RES,
}

NEXT_STATE_ON_RES = {
    SessionState.MATED: SessionState.INITIALIZE,
    SessionState.INITIALIZE: SessionState.CHECK,
    SessionState.CHECK: SessionState.CHARGE,
    SessionState.POWER_DOWN: SessionState.UNMATED,
}

# recoverable faults step back one phase; Mated retries in place
RECOVERABLE_TARGET = {
    SessionState.MATED: SessionState.MATED,
    SessionState.INITIALIZE: SessionState.MATED,
    SessionState.CHECK: SessionState.INITIALIZE,
    SessionState.CHARGE: SessionState.MATED,
    SessionState.POWER_DOWN: SessionState.UNMATED,
}

PLUG_OUT_STATES = frozenset({
    SessionState.POWER_DOWN,
    SessionState.UNMATED,
    SessionState.MATED,
    SessionState.CHARGE,
})


def _record(s: ChargingSession, now: SimTime, kind: str, payload: dict) -> TelemetryRecord:
    return TelemetryRecord(
        ts=now, source=f"ev:{s.ev_id}", kind=kind, payload=payload, session_id=s.id
    )


def _transition(
    s: ChargingSession,
    new_state: SessionState,
    event: SessionEvent,
    now: SimTime,
    **changes,
) -> tuple[ChargingSession, TelemetryRecord]:
    s2 = replace(s, state=new_state, state_entered_at=now, **changes)
    payload = {"from": s.state.value, "to": new_state.value, "event": event.kind.value}
    if event.fault_code:
        payload["fault_code"] = event.fault_code
        payload["severity"] = event.severity.value
    if s2.error_flag:
        payload["error_flag"] = s2.error_flag
    return s2, _record(s2, now, "state-transition", payload)


def plug_in(
    ev: EvConfig,
    evse: EvseConfig,
    now: SimTime,
    existing: ChargingSession | None = None,
    params: SessionParams | None = None,
) -> tuple[ChargingSession, list[TelemetryRecord]]:
    """Create a fresh session in Mated; the EVSE must be free."""
    if existing is not None and existing.state is not SessionState.UNMATED:
        raise EvseOccupied(f"EVSE {evse.id} busy with session {existing.id}")
    if params is None:
        params = SessionParams(charge_status_timeout_s=evse.charge_status_timeout_s)
    session = ChargingSession(
        id=f"sess-{ev.id}-{now.seq}",
        ev_id=ev.id,
        evse_id=evse.id,
        state=SessionState.MATED,
        state_entered_at=now,
        max_kw=min(ev.max_charge_rate_kw, evse.max_power_kw),
        params=params,
    )
    rec = _record(
        session,
        now,
        "state-transition",
        {"from": SessionState.UNMATED.value, "to": SessionState.MATED.value, "event": "plug-in"},
    )
    return session, [rec]


def phase_request(s: ChargingSession, now: SimTime) -> tuple[ChargingSession, V2gMessage]:
    """Issue the current state's request and arm its response deadline."""
    if s.state not in REQ_FOR_STATE:
        raise IllegalEvent(f"no phase request in state {s.state.value}")
    if s.awaiting is not None:
        raise IllegalEvent("phase request while a response is outstanding")
    kind = REQ_FOR_STATE[s.state]
    timeout = (
        s.params.charge_status_timeout_s
        if s.state is SessionState.CHARGE
        else s.params.state_timeout_s
    )
    s2 = replace(
        s,
        awaiting=(RES_FOR_STATE[s.state], now.plus(timeout)),
        awaiting_token=s.awaiting_token + 1,
    )
    return s2, V2gMessage(kind=kind, session_id=s.id, payload={})


def advance(
    s: ChargingSession, event: SessionEvent, now: SimTime
) -> tuple[ChargingSession, list[V2gMessage], list[TelemetryRecord]]:
    """Apply one event to the session, per the transition table."""
    kind = event.kind

    if kind is EventKind.PLUG_IN:
        raise IllegalEvent("plug-in is not a session event; use plug_in()")

    if kind is EventKind.TIMEOUT:
        if s.awaiting is None:
            raise IllegalEvent("timeout without an outstanding response")
        s2, rec = _transition(
            s,
            SessionState.UNMATED,
            event,
            now,
            awaiting=None,
            delivered_kw=0.0,
            error_flag=f"timeout:{s.state.value}",
        )
        return s2, [], [rec]

    if kind is EventKind.MSG_ARRIVED:
        msg = event.msg
        if msg is None or s.awaiting is None or msg.kind is not s.awaiting[0]:
            raise IllegalEvent(f"unexpected message {msg and msg.kind} in {s.state.value}")
        if s.state is SessionState.CHARGE:
            # heartbeat answered; stay in Charge
            return replace(s, awaiting=None), [], []
        nxt = NEXT_STATE_ON_RES[s.state]
        if nxt is SessionState.CHARGE:
            s2, rec = _transition(
                s, nxt, event, now, awaiting=None, delivered_kw=s.max_kw,
                charged_to_s=now.seconds, error_flag=None,
            )
            s2, req = phase_request(s2, now)
            return s2, [req], [rec]
        if nxt is SessionState.UNMATED:
            s2, rec = _transition(
                s, nxt, event, now, awaiting=None, delivered_kw=0.0, error_flag=None
            )
            return s2, [], [rec]
        s2, rec = _transition(s, nxt, event, now, awaiting=None)
        return s2, [], [rec]

    if kind is EventKind.FAULT_RAISED:
        if s.state is SessionState.UNMATED:
            raise IllegalEvent("fault on a detached session")
        if event.severity is FaultSeverity.RECOVERABLE:
            target = RECOVERABLE_TARGET[s.state]
            flag = f"fault:{event.fault_code}" if target is SessionState.UNMATED else None
            s2, rec = _transition(
                s, target, event, now, awaiting=None, delivered_kw=0.0, error_flag=flag
            )
            return s2, [], [rec]
        # abort and emergency both terminate; emergency skips any wind-down
        s2, rec = _transition(
            s,
            SessionState.UNMATED,
            event,
            now,
            awaiting=None,
            delivered_kw=0.0,
            error_flag=f"fault:{event.fault_code}",
        )
        return s2, [], [rec]

    if kind in (EventKind.SOC_FULL, EventKind.USER_INTERRUPT):
        if s.state is not SessionState.CHARGE:
            raise IllegalEvent(f"{kind.value} outside Charge")
        # delivered_kw is kept as the ramp-down starting level
        s2, rec = _transition(s, SessionState.POWER_DOWN, event, now, awaiting=None)
        return s2, [], [rec]

    if kind is EventKind.PLUG_OUT:
        if s.state not in PLUG_OUT_STATES:
            raise IllegalEvent(f"plug-out in state {s.state.value}")
        if s.state is SessionState.UNMATED:
            return s, [], []
        records = []
        if s.state is SessionState.CHARGE:
            s2, rec = _transition(
                s,
                SessionState.UNMATED,
                event,
                now,
                awaiting=None,
                delivered_kw=0.0,
                error_flag="abrupt-disconnect",
            )
            records = [
                rec,
                _record(s2, now, "error", {"code": "abrupt-disconnect"}),
            ]
            return s2, [], records
        s2, rec = _transition(
            s, SessionState.UNMATED, event, now, awaiting=None, delivered_kw=0.0
        )
        return s2, [], [rec]

    raise IllegalEvent(f"unhandled event {kind}")


def charging_tick(
    s: ChargingSession,
    ev_cfg: EvConfig,
    b: BatteryState,
    now: SimTime,
    power_scale: float = 1.0,
) -> tuple[ChargingSession, V2gMessage | None, BatteryState]:
    """One heartbeat of the charging loop: integrate energy, send a status request.

    No new status request goes out while the previous one is unanswered, so a
    dead link lets the armed deadline expire instead of sliding it forward.
    """
    if s.state is not SessionState.CHARGE:
        raise IllegalEvent("charging_tick outside Charge")
    elapsed = now.seconds - s.charged_to_s
    b2 = b
    if elapsed > 0 and s.delivered_kw * power_scale > 0:
        b2 = battery_step(b, s.delivered_kw * power_scale, elapsed)
    s2 = replace(s, charged_to_s=now.seconds)
    msg = None
    if s2.awaiting is None:
        s2, msg = phase_request(s2, now)
    return s2, msg, b2


def plug_out(
    s: ChargingSession, now: SimTime
) -> tuple[ChargingSession, list[TelemetryRecord]]:
    """Physically disconnect; from Charge this is an abrupt break."""
    s2, _msgs, recs = advance(s, SessionEvent.plug_out(), now)
    return s2, recs


def delivered_kw_at(s: ChargingSession, now: SimTime) -> float:
    """Instantaneous delivery level, including the linear power-down ramp."""
    if s.state is SessionState.CHARGE:
        return s.delivered_kw
    if s.state is SessionState.POWER_DOWN:
        ramp = s.params.power_down_ramp_s
        if ramp <= 0:
            return 0.0
        frac = (now.seconds - s.state_entered_at.seconds) / ramp
        return max(0.0, s.delivered_kw * (1.0 - frac))
    return 0.0
