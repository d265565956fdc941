"""Deterministic discrete-event loop driving daemons, attacks and telemetry.

One heap ordered by (virtual seconds, schedule seq) owns all mutation. Sessions
are advanced through the pure FSM; messages travel either directly (mock
driver) or over fault-injectable links and the topic bus (linked driver).
Identical scenario + seed + driver yields an identical run.
"""

from __future__ import annotations

import heapq
import time as _wallclock
from dataclasses import dataclass, replace
from enum import Enum

from . import fsm
from .attacks import (
    ALL_EVSES,
    AttackKind,
    AttackPlan,
    exec_broken_wire_l1,
    exec_broken_wire_l3,
    parse_fuzz_plan,
    parse_power_params,
    schedule as schedule_attacks,
)
from .fuzz import FuzzRecord, iter_campaign
from .model import BatteryState, SimTime, baseline_load
from .ocpp import CsmsState
from .scenario import Scenario, Violation, validate_scenario
from .seeding import derive_rng
from .simnet import Envelope, LinkEvent, LinkEventKind, PacketLog, SimLink, TopicBus
from .telemetry import TelemetryRecord, TelemetryStore


class ScenarioInvalid(Exception):
    def __init__(self, violations):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = list(violations)


class InternalInvariantViolation(Exception):
    """An FSM IllegalEvent or other impossible state reached during a run."""


class UnknownLink(Exception):
    pass


class NoFuzzData(Exception):
    pass


class DriverKind(str, Enum):
    MOCK = "mock"
    LINKED = "linked"


class RunExit(str, Enum):
    COMPLETED = "completed"
    INTERRUPTED = "interrupted"


@dataclass
class RunResult:
    scenario: Scenario
    store: TelemetryStore
    packet_logs: dict[str, PacketLog]
    fuzz_records: list[FuzzRecord] | None
    exit: RunExit


class _Ev(str, Enum):
    PLUG_IN = "plug-in"
    PHASE_SEND = "phase-send"
    AWAIT_DEADLINE = "await-deadline"
    HEARTBEAT = "heartbeat"
    INTERRUPT = "interrupt"
    LINK = "link"
    ATTACK_START = "attack-start"
    ATTACK_END = "attack-end"
    FUZZ_STEP = "fuzz-step"
    POWER_SAMPLE = "power-sample"
    SCENARIO_END = "scenario-end"


class _Sim:
    def __init__(self, scenario: Scenario, driver: DriverKind, realtime: bool = False):
        self.sc = scenario
        self.driver = driver
        self.realtime = realtime
        self.store = TelemetryStore()
        self.bus = TopicBus()
        self.heap: list = []
        self.seq = 0
        self.now = SimTime(0.0, 0)

        self.ev_cfg = {ev.id: ev for ev in scenario.evs}
        self.evse_cfg = {e.id: e for e in scenario.evses}
        self.sessions: dict[str, fsm.ChargingSession] = {}
        self.session_gen: dict[str, int] = {}
        self.batteries = {
            ev.id: BatteryState(ev.initial_soc, ev.battery_capacity_kwh)
            for ev in scenario.evs
        }
        self.occupancy: dict[str, str | None] = {e.id: None for e in scenario.evses}

        self.links: dict[str, SimLink] = {}
        self.link_rngs = {}
        if driver is DriverKind.LINKED:
            for ev in scenario.evs:
                link_id = f"{ev.id}--{ev.target_evse}"
                self.links[link_id] = SimLink(
                    id=link_id,
                    endpoints=(f"ev:{ev.id}", f"evse:{ev.target_evse}"),
                    latency_s=scenario.sim.link_latency_s,
                    loss_prob=scenario.sim.link_loss_prob,
                    rto_s=scenario.sim.link_rto_s,
                    max_retransmits=scenario.sim.link_max_retransmits,
                )
                self.link_rngs[link_id] = derive_rng(scenario.seed, "link", link_id)
                self.bus.subscribe(f"v2g/{link_id}/to-evse", self._bus_to_evse)
                self.bus.subscribe(f"v2g/{link_id}/to-ev", self._bus_to_ev)

        self.csms_state = CsmsState()
        self.csms_policy = scenario.csms
        self.power_windows = []
        self.power_rng = derive_rng(scenario.seed, "l3-power")
        self.charge_rng = derive_rng(scenario.seed, "l3-charge")
        self.fuzz_records: list[FuzzRecord] | None = None
        self._campaigns: dict[int, object] = {}

    # -- scheduling ---------------------------------------------------------

    def _push(self, at_s: float, kind: _Ev, data: dict) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (at_s, self.seq, kind, data))

    def _append(self, rec: TelemetryRecord) -> None:
        self.store.append(rec)

    def _rec(self, kind: str, source: str, payload: dict, session_id=None, layer=None):
        self._append(TelemetryRecord(
            ts=self.now, source=source, kind=kind, payload=payload,
            session_id=session_id, layer=layer,
        ))

    # -- main loop ----------------------------------------------------------

    def run(self) -> RunResult:
        sc = self.sc
        for ev in sc.evs:
            self._push(ev.plug_in_time_s, _Ev.PLUG_IN, {"ev_id": ev.id})
            if ev.interrupt_time_s is not None:
                self._push(ev.interrupt_time_s, _Ev.INTERRUPT, {"ev_id": ev.id})
        for item in schedule_attacks(sc.attacks, sc):
            kind = _Ev.ATTACK_START if item.edge == "start" else _Ev.ATTACK_END
            self._push(item.at_s, kind, {"plan": item.plan})
        if sc.evses:
            self._push(0.0, _Ev.POWER_SAMPLE, {"k": 0})
        self._push(sc.schedule_end_s, _Ev.SCENARIO_END, {})

        self._rec("scenario-start", "sim", {
            "seed": sc.seed, "driver": self.driver.value,
            "evs": len(sc.evs), "evses": len(sc.evses),
        })

        wall0 = _wallclock.monotonic()
        handlers = {
            _Ev.PLUG_IN: self._on_plug_in,
            _Ev.PHASE_SEND: self._on_phase_send,
            _Ev.AWAIT_DEADLINE: self._on_await_deadline,
            _Ev.HEARTBEAT: self._on_heartbeat,
            _Ev.INTERRUPT: self._on_interrupt,
            _Ev.LINK: self._on_link_event,
            _Ev.ATTACK_START: self._on_attack_start,
            _Ev.ATTACK_END: self._on_attack_end,
            _Ev.FUZZ_STEP: self._on_fuzz_step,
            _Ev.POWER_SAMPLE: self._on_power_sample,
        }
        try:
            while self.heap:
                at_s, seq, kind, data = heapq.heappop(self.heap)
                self.now = SimTime(at_s, seq)
                if self.realtime:
                    lag = at_s - (_wallclock.monotonic() - wall0)
                    if lag > 0:
                        _wallclock.sleep(lag)
                if kind is _Ev.SCENARIO_END:
                    self._rec("scenario-end", "sim", {"t": at_s})
                    break
                handlers[kind](data)
        except fsm.IllegalEvent as e:
            raise InternalInvariantViolation(str(e)) from e

        return RunResult(
            scenario=sc,
            store=self.store,
            packet_logs={lid: link.log for lid, link in self.links.items()},
            fuzz_records=self.fuzz_records,
            exit=RunExit.COMPLETED,
        )

    # -- sessions -----------------------------------------------------------

    def _on_plug_in(self, data: dict) -> None:
        ev = self.ev_cfg[data["ev_id"]]
        evse = self.evse_cfg[ev.target_evse]
        current_sid = self.occupancy.get(evse.id)
        existing = self.sessions.get(current_sid) if current_sid else None
        params = fsm.SessionParams(
            charge_status_timeout_s=evse.charge_status_timeout_s,
            state_timeout_s=evse.charge_status_timeout_s,
            handshake_delay_s=self.sc.sim.handshake_delay_s,
            power_down_ramp_s=self.sc.sim.power_down_ramp_s,
        )
        try:
            session, recs = fsm.plug_in(ev, evse, self.now, existing=existing, params=params)
        except fsm.EvseOccupied as e:
            self._rec("error", f"ev:{ev.id}", {"code": "evse-occupied", "detail": str(e)})
            return
        for r in recs:
            self._append(r)
        self.sessions[session.id] = session
        self.session_gen[session.id] = 0
        self.occupancy[evse.id] = session.id
        self._push(
            self.now.seconds + params.handshake_delay_s,
            _Ev.PHASE_SEND,
            {"sid": session.id, "gen": 0},
        )

    def _on_phase_send(self, data: dict) -> None:
        sid, gen = data["sid"], data["gen"]
        s = self.sessions.get(sid)
        if s is None or self.session_gen[sid] != gen or s.awaiting is not None:
            return
        if s.state not in fsm.REQ_FOR_STATE or s.state is fsm.SessionState.CHARGE:
            return
        s2, msg = fsm.phase_request(s, self.now)
        self.sessions[sid] = s2
        self._push(
            s2.awaiting[1].seconds, _Ev.AWAIT_DEADLINE,
            {"sid": sid, "token": s2.awaiting_token},
        )
        self._send_to_evse(s2, msg)

    def _on_await_deadline(self, data: dict) -> None:
        sid, token = data["sid"], data["token"]
        s = self.sessions.get(sid)
        if s is None or s.awaiting is None or s.awaiting_token != token:
            return
        self._apply_advance(sid, fsm.SessionEvent.timeout())

    def _on_heartbeat(self, data: dict) -> None:
        sid, gen = data["sid"], data["gen"]
        s = self.sessions.get(sid)
        if s is None or self.session_gen[sid] != gen or s.state is not fsm.SessionState.CHARGE:
            return
        scale = self._power_scale(s.evse_id, self.charge_rng)
        ev_cfg = self.ev_cfg[s.ev_id]
        s2, msg, battery = fsm.charging_tick(
            s, ev_cfg, self.batteries[s.ev_id], self.now, power_scale=scale
        )
        self.sessions[sid] = s2
        self.batteries[s.ev_id] = battery
        if msg is not None:
            self._push(
                s2.awaiting[1].seconds, _Ev.AWAIT_DEADLINE,
                {"sid": sid, "token": s2.awaiting_token},
            )
            self._send_to_evse(s2, msg)
        if battery.soc >= 1.0:
            self._apply_advance(sid, fsm.SessionEvent.soc_full())
            return
        evse = self.evse_cfg[s.evse_id]
        self._push(self.now.seconds + evse.heartbeat_interval_s, _Ev.HEARTBEAT,
                   {"sid": sid, "gen": gen})

    def _on_interrupt(self, data: dict) -> None:
        for sid, s in list(self.sessions.items()):
            if s.ev_id == data["ev_id"] and s.state is fsm.SessionState.CHARGE:
                self._apply_advance(sid, fsm.SessionEvent.user_interrupt())
                return

    def _apply_advance(self, sid: str, event: fsm.SessionEvent) -> None:
        s = self.sessions[sid]
        s2, msgs, recs = fsm.advance(s, event, self.now)
        self.sessions[sid] = s2
        for r in recs:
            self._append(r)
        if not recs:
            return  # no transition (e.g. heartbeat answered)
        gen = self.session_gen[sid] + 1
        self.session_gen[sid] = gen
        state = s2.state
        delay = self.sc.sim.handshake_delay_s
        if state is fsm.SessionState.UNMATED:
            if self.occupancy.get(s2.evse_id) == sid:
                self.occupancy[s2.evse_id] = None
            return
        if state in (fsm.SessionState.MATED, fsm.SessionState.INITIALIZE,
                     fsm.SessionState.CHECK):
            self._push(self.now.seconds + delay, _Ev.PHASE_SEND, {"sid": sid, "gen": gen})
        elif state is fsm.SessionState.CHARGE:
            for msg in msgs:
                self._push(
                    s2.awaiting[1].seconds, _Ev.AWAIT_DEADLINE,
                    {"sid": sid, "token": s2.awaiting_token},
                )
                self._send_to_evse(s2, msg)
            evse = self.evse_cfg[s2.evse_id]
            self._push(self.now.seconds + evse.heartbeat_interval_s, _Ev.HEARTBEAT,
                       {"sid": sid, "gen": gen})
        elif state is fsm.SessionState.POWER_DOWN:
            self._push(self.now.seconds + s2.params.power_down_ramp_s, _Ev.PHASE_SEND,
                       {"sid": sid, "gen": gen})

    # -- message transport ---------------------------------------------------

    def _send_to_evse(self, session: fsm.ChargingSession, msg: fsm.V2gMessage) -> None:
        if self.driver is DriverKind.MOCK:
            self._record_v2g(msg, f"ev:{session.ev_id}", session.id)
            res = self._evse_respond(msg)
            if res is not None:
                self._record_v2g(res, f"evse:{session.evse_id}", session.id)
                self._deliver_res(res)
            return
        link_id = f"{session.ev_id}--{session.evse_id}"
        link = self.links[link_id]
        env = Envelope(topic=f"v2g/{link_id}/to-evse", payload=msg, sent_at=self.now)
        for le in link.send(env, self.link_rngs[link_id], self.now):
            self._push(le.at_s, _Ev.LINK, {"event": le})

    def _send_to_ev(self, link_id: str, msg: fsm.V2gMessage) -> None:
        link = self.links[link_id]
        env = Envelope(topic=f"v2g/{link_id}/to-ev", payload=msg, sent_at=self.now)
        for le in link.send(env, self.link_rngs[link_id], self.now):
            self._push(le.at_s, _Ev.LINK, {"event": le})

    def _on_link_event(self, data: dict) -> None:
        le: LinkEvent = data["event"]
        link = self.links[le.link_id]
        if le.kind is LinkEventKind.FAILED:
            self._rec("packet", f"link:{le.link_id}", {
                "event": "delivery-failure",
                "topic": le.envelope.topic,
                "attempts": le.envelope.attempt,
            }, layer="L1")
            return
        env, more = link.handle(le, self.link_rngs[le.link_id])
        for nxt in more:
            self._push(nxt.at_s, _Ev.LINK, {"event": nxt})
        if env is not None:
            self.bus.publish(env)

    def _bus_to_evse(self, env: Envelope) -> None:
        msg: fsm.V2gMessage = env.payload
        link_id = env.topic.split("/")[1]
        session = self.sessions.get(msg.session_id)
        ev_id = session.ev_id if session else link_id.split("--")[0]
        self._record_v2g(msg, f"ev:{ev_id}", msg.session_id)
        res = self._evse_respond(msg)
        if res is not None:
            self._send_to_ev(link_id, res)

    def _bus_to_ev(self, env: Envelope) -> None:
        msg: fsm.V2gMessage = env.payload
        session = self.sessions.get(msg.session_id)
        evse_id = session.evse_id if session else ""
        self._record_v2g(msg, f"evse:{evse_id}" if evse_id else "sim", msg.session_id)
        self._deliver_res(msg)

    def _record_v2g(self, msg: fsm.V2gMessage, source: str, session_id: str) -> None:
        self._rec("v2g-msg", source, {"kind": msg.kind.value, "payload": msg.payload},
                  session_id=session_id, layer="L2")

    def _evse_respond(self, msg: fsm.V2gMessage) -> fsm.V2gMessage | None:
        res_kind = {
            fsm.MsgKind.SESSION_SETUP_REQ: fsm.MsgKind.SESSION_SETUP_RES,
            fsm.MsgKind.CABLE_CHECK_REQ: fsm.MsgKind.CABLE_CHECK_RES,
            fsm.MsgKind.POWER_DELIVERY_REQ: fsm.MsgKind.POWER_DELIVERY_RES,
            fsm.MsgKind.CHARGING_STATUS_REQ: fsm.MsgKind.CHARGING_STATUS_RES,
            fsm.MsgKind.SESSION_STOP_REQ: fsm.MsgKind.SESSION_STOP_RES,
        }.get(msg.kind)
        if res_kind is None:
            return None
        session = self.sessions.get(msg.session_id)
        payload = {"evse_id": session.evse_id if session else ""}
        return fsm.V2gMessage(kind=res_kind, session_id=msg.session_id, payload=payload)

    def _deliver_res(self, msg: fsm.V2gMessage) -> None:
        s = self.sessions.get(msg.session_id)
        if s is None or s.awaiting is None or s.awaiting[0] is not msg.kind:
            return  # stale or duplicate response
        self._apply_advance(msg.session_id, fsm.SessionEvent.msg_arrived(msg))

    # -- attacks --------------------------------------------------------------

    def _on_attack_start(self, data: dict) -> None:
        plan: AttackPlan = data["plan"]
        if plan.kind is AttackKind.BROKEN_WIRE_L1:
            exec_broken_wire_l1(self.links[plan.target_id], self.now, self.store)
            return
        if plan.kind is AttackKind.BROKEN_WIRE_L3:
            params = parse_power_params(plan.params)
            targets = None if plan.target_id == ALL_EVSES else {plan.target_id}
            window = exec_broken_wire_l3(targets, params, (plan.start_s, plan.end_s))
            self.power_windows.append(window)
            self._rec("attack-start", "attack", {
                "kind": plan.kind.value,
                "target": plan.target_id,
                "layers": ["L3", "L4"],
                "window": [plan.start_s, plan.end_s],
                "reduction_factor": params.reduction_factor,
            }, layer="L3")
            for sid, s in sorted(self.sessions.items()):
                if s.state is not fsm.SessionState.UNMATED and window.targets(s.evse_id):
                    self._apply_advance(
                        sid,
                        fsm.SessionEvent.fault("power-disruption",
                                               fsm.FaultSeverity.RECOVERABLE),
                    )
            return
        # fuzzification
        fuzz_plan = parse_fuzz_plan(plan.params, self.sc.seed)
        campaign_id = len(self._campaigns)
        self._campaigns[campaign_id] = iter_campaign(
            fuzz_plan, self.csms_state, self.csms_policy
        )
        if self.fuzz_records is None:
            self.fuzz_records = []
        self._rec("attack-start", "attack", {
            "kind": plan.kind.value,
            "target": plan.target_id,
            "layers": ["L2"],
            "strategy": fuzz_plan.strategy.value,
        }, layer="L2")
        self._push(self.now.seconds, _Ev.FUZZ_STEP, {"campaign": campaign_id})

    def _on_fuzz_step(self, data: dict) -> None:
        campaign = self._campaigns[data["campaign"]]
        try:
            rec: FuzzRecord = next(campaign)
        except StopIteration:
            self._rec("attack-end", "attack", {"kind": AttackKind.FUZZIFICATION.value},
                      layer="L2")
            return
        self.fuzz_records.append(rec)
        self._rec("ocpp-msg", "csms", {
            "action": rec.action,
            "request": rec.sent.decode("utf-8", "replace"),
            "outcome": list(rec.outcome.as_tuple()),
        }, layer="L2")
        self._rec("fuzz-record", "attack", {
            "seq": rec.seq,
            "action": rec.action,
            "mutation": rec.mutation.value,
            "outcome": list(rec.outcome.as_tuple()),
            "latency_ms": rec.latency_s * 1000.0,
            "server_alive_after": rec.server_alive_after,
        }, layer="L2")
        self._push(self.now.seconds + rec.latency_s, _Ev.FUZZ_STEP,
                   {"campaign": data["campaign"]})

    def _on_attack_end(self, data: dict) -> None:
        plan: AttackPlan = data["plan"]
        if plan.kind is AttackKind.BROKEN_WIRE_L1:
            self.links[plan.target_id].restore()
        layer = {"broken-wire-l1": "L1", "broken-wire-l3": "L3"}.get(plan.kind.value, "L2")
        self._rec("attack-end", "attack",
                  {"kind": plan.kind.value, "target": plan.target_id}, layer=layer)

    # -- power ---------------------------------------------------------------

    def _power_scale(self, evse_id: str, rng) -> float:
        scale = 1.0
        for window in self.power_windows:
            if window.targets(evse_id):
                scale *= window.multiplier(rng, self.now.seconds)
        return scale

    def _on_power_sample(self, data: dict) -> None:
        t = self.now.seconds
        expected = baseline_load(self.sc.baseline_load_profile, t)
        scales = [self._power_scale(e.id, self.power_rng) for e in self.sc.evses]
        delivered = expected * (sum(scales) / len(scales))
        self._rec("power-sample", "sim",
                  {"expected_mw": expected, "delivered_mw": delivered}, layer="L4")
        k = data["k"] + 1
        nxt = k * self.sc.sim.power_sample_interval_s
        if nxt < self.sc.schedule_end_s:
            self._push(nxt, _Ev.POWER_SAMPLE, {"k": k})


def run(
    scenario: Scenario,
    driver: DriverKind | str = DriverKind.LINKED,
    seed: int | None = None,
    realtime: bool = False,
) -> RunResult:
    """Validate and execute a scenario; raises ScenarioInvalid on a bad one."""
    driver = DriverKind(driver)
    if seed is not None:
        scenario = replace(scenario, seed=seed)
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioInvalid(violations)
    if driver is DriverKind.MOCK and any(
        p.kind is AttackKind.BROKEN_WIRE_L1 for p in scenario.attacks
    ):
        raise ScenarioInvalid(
            [Violation("attacks", "broken-wire-l1 needs the linked driver")]
        )
    return _Sim(scenario, driver, realtime=realtime).run()
