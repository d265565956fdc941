"""Fault-injectable point-to-point links, packet accounting and the topic bus.

A link resolves each transmission attempt at its send instant: either it will
arrive latency_s later, or it is lost and retried after rto_s, up to
max_retransmits extra attempts. Severing a link forces total loss and drops
whatever is still in flight.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum

from .model import SimTime


@dataclass(frozen=True)
class Envelope:
    topic: str
    payload: object
    sent_at: SimTime
    attempt: int = 1

    def bump(self) -> "Envelope":
        return replace(self, attempt=self.attempt + 1)


@dataclass
class _Bucket:
    sent: int = 0
    delivered: int = 0
    lost: int = 0
    retransmitted: int = 0
    errored: int = 0


class PacketLog:
    """Per-second counters of link activity."""

    FIELDS = ("sent", "delivered", "lost", "retransmitted", "errored")

    def __init__(self):
        self.buckets: dict[int, _Bucket] = {}

    def add(self, t_s: float, name: str, n: int = 1) -> None:
        b = self.buckets.setdefault(int(t_s), _Bucket())
        setattr(b, name, getattr(b, name) + n)

    def total(self, name: str) -> int:
        return sum(getattr(b, name) for b in self.buckets.values())


def packet_series(log: PacketLog, from_s: int, to_s: int) -> list[dict]:
    """One row per second in [from_s, to_s], zero-filled where nothing happened."""
    if from_s > to_s:
        raise ValueError("from_s must not exceed to_s")
    rows = []
    for t in range(int(from_s), int(to_s) + 1):
        b = log.buckets.get(t, _Bucket())
        rows.append({
            "t": t,
            "sent": b.sent,
            "delivered": b.delivered,
            "retransmitted": b.retransmitted,
            "errored": b.errored,
        })
    return rows


def packet_series_csv(rows: list[dict]) -> str:
    lines = ["t,sent,delivered,retransmitted,errored"]
    for r in rows:
        lines.append(f"{r['t']},{r['sent']},{r['delivered']},{r['retransmitted']},{r['errored']}")
    return "\n".join(lines) + "\n"


class LinkEventKind(str, Enum):
    ATTEMPT = "attempt"
    DELIVER = "deliver"
    FAILED = "failed"


@dataclass(frozen=True)
class LinkEvent:
    at_s: float
    kind: LinkEventKind
    link_id: str
    envelope: Envelope
    key: int = 0


@dataclass
class SimLink:
    id: str
    endpoints: tuple[str, str]
    latency_s: float = 0.01
    loss_prob: float = 0.0
    severed: bool = False
    rto_s: float = 0.2
    max_retransmits: int = 5
    log: PacketLog = field(default_factory=PacketLog)
    _pending: dict[int, float] = field(default_factory=dict)
    _next_key: int = 0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0,1]")
        if self.rto_s <= 0 or self.latency_s < 0 or self.max_retransmits < 0:
            raise ValueError("bad link parameters")

    def send(self, env: Envelope, rng: random.Random, now: SimTime) -> list[LinkEvent]:
        """First transmission attempt of an envelope."""
        if env.attempt != 1:
            raise ValueError("send() expects a fresh envelope (attempt=1)")
        return self._attempt(env, rng, now.seconds)

    def _attempt(self, env: Envelope, rng: random.Random, t_s: float) -> list[LinkEvent]:
        self.log.add(t_s, "sent")
        if env.attempt > 1:
            self.log.add(t_s, "retransmitted")
        eff_loss = 1.0 if self.severed else self.loss_prob
        if eff_loss >= 1.0:
            lost = True
        elif eff_loss <= 0.0:
            lost = False
        else:
            lost = rng.random() < eff_loss
        if lost:
            self.log.add(t_s, "lost")
            if env.attempt <= self.max_retransmits:
                return [LinkEvent(t_s + self.rto_s, LinkEventKind.ATTEMPT, self.id, env.bump())]
            self.log.add(t_s, "errored")
            return [LinkEvent(t_s, LinkEventKind.FAILED, self.id, env)]
        self._next_key += 1
        key = self._next_key
        arrival = t_s + self.latency_s
        self._pending[key] = arrival
        return [LinkEvent(arrival, LinkEventKind.DELIVER, self.id, env, key=key)]

    def handle(self, event: LinkEvent, rng: random.Random) -> tuple[Envelope | None, list[LinkEvent]]:
        """Process a link event; returns (delivered envelope or None, follow-ups)."""
        if event.kind is LinkEventKind.ATTEMPT:
            return None, self._attempt(event.envelope, rng, event.at_s)
        if event.kind is LinkEventKind.DELIVER:
            if event.key in self._pending:
                del self._pending[event.key]
                self.log.add(event.at_s, "delivered")
                return event.envelope, []
            return None, []  # cancelled by a sever
        return None, []  # FAILED is terminal; the caller records it

    def sever(self, at: SimTime) -> "SimLink":
        """Force total loss from `at` on; in-flight deliveries after `at` drop."""
        self.severed = True
        doomed = [k for k, arrival in self._pending.items() if arrival > at.seconds]
        for k in doomed:
            del self._pending[k]
            self.log.add(at.seconds, "lost")
        return self

    def restore(self) -> "SimLink":
        self.severed = False
        return self


class TopicBus:
    """In-process topic router with at-most-once, insertion-ordered delivery.

    Patterns match exactly, or by prefix when they end in '/#'.
    """

    def __init__(self):
        self._subs: list[tuple[str, object]] = []

    def subscribe(self, pattern: str, handler) -> None:
        self._subs.append((pattern, handler))

    @staticmethod
    def _matches(pattern: str, topic: str) -> bool:
        if pattern == topic:
            return True
        if pattern.endswith("/#"):
            return topic.startswith(pattern[:-1])
        return False

    def publish(self, env: Envelope) -> int:
        n = 0
        for pattern, handler in self._subs:
            if self._matches(pattern, env.topic):
                handler(env)
                n += 1
        return n
