"""Append-only document store for simulation events, with JSONL persistence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .model import SimTime

KINDS = frozenset({
    "scenario-start",
    "scenario-end",
    "state-transition",
    "v2g-msg",
    "ocpp-msg",
    "packet",
    "attack-start",
    "attack-end",
    "fuzz-record",
    "power-sample",
    "error",
})

LAYERS = frozenset({"L1", "L2", "L3", "L4"})

_BARE_SOURCES = frozenset({"csms", "attack", "sim"})
_PREFIXED_SOURCES = ("ev:", "evse:", "link:")


class OutOfOrder(Exception):
    """Raised when an append would regress the store's timestamp order."""


class FormatError(Exception):
    """Raised when a persisted line is not a valid telemetry record."""


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _valid_source(source: str) -> bool:
    if source in _BARE_SOURCES:
        return True
    return any(source.startswith(p) and len(source) > len(p) for p in _PREFIXED_SOURCES)


@dataclass(frozen=True)
class TelemetryRecord:
    ts: SimTime
    source: str
    kind: str
    payload: dict
    session_id: str | None = None
    layer: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown telemetry kind: {self.kind}")
        if self.layer is not None and self.layer not in LAYERS:
            raise ValueError(f"unknown layer: {self.layer}")
        if not _valid_source(self.source):
            raise ValueError(f"bad source tag: {self.source}")

    def to_dict(self) -> dict:
        d = {
            "ts": self.ts.seconds,
            "seq": self.ts.seq,
            "source": self.source,
            "kind": self.kind,
            "payload": self.payload,
        }
        if self.session_id is not None:
            d["session_id"] = self.session_id
        if self.layer is not None:
            d["layer"] = self.layer
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TelemetryRecord":
        return cls(
            ts=SimTime(d["ts"], d["seq"]),
            source=d["source"],
            kind=d["kind"],
            payload=d["payload"],
            session_id=d.get("session_id"),
            layer=d.get("layer"),
        )


@dataclass(frozen=True)
class Query:
    """Record filter; absent fields match everything."""

    time_range: tuple[float, float] | None = None
    source: str | None = None
    kind: str | None = None
    session_id: str | None = None

    def matches(self, rec: TelemetryRecord) -> bool:
        if self.time_range is not None:
            lo, hi = self.time_range
            if not lo <= rec.ts.seconds <= hi:
                return False
        if self.source is not None and rec.source != self.source:
            return False
        if self.kind is not None and rec.kind != self.kind:
            return False
        if self.session_id is not None and rec.session_id != self.session_id:
            return False
        return True


class TelemetryStore:
    """In-memory append-only store; records stay in (ts, append) order."""

    def __init__(self):
        self._records: list[TelemetryRecord] = []

    def __len__(self) -> int:
        return len(self._records)

    def append(self, rec: TelemetryRecord) -> None:
        if self._records:
            last = self._records[-1].ts
            if (rec.ts.seconds, rec.ts.seq) < (last.seconds, last.seq):
                raise OutOfOrder(
                    f"ts regression: {rec.ts.seconds}/{rec.ts.seq} after {last.seconds}/{last.seq}"
                )
        self._records.append(rec)

    def records(self) -> list[TelemetryRecord]:
        return list(self._records)

    def query(self, q: Query) -> list[TelemetryRecord]:
        return [r for r in self._records if q.matches(r)]

    def export_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for rec in self._records:
                f.write(canonical_json(rec.to_dict()))
                f.write("\n")

    @classmethod
    def load_jsonl(cls, path) -> "TelemetryStore":
        store = cls()
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    d = json.loads(line)
                    rec = TelemetryRecord.from_dict(d)
                except (ValueError, KeyError, TypeError) as e:
                    raise FormatError(f"line {lineno}: {e}") from e
                store.append(rec)
        return store
