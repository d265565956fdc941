"""Analysis exports derived from a run: packet series, power curve, fuzz table."""

from __future__ import annotations

import math
from pathlib import Path

from .fuzz import FuzzRecord, MutationMode, OutcomeCode, fuzz_summary_csv, summarize_fuzz
from .runner import NoFuzzData, RunResult, UnknownLink
from .simnet import packet_series, packet_series_csv
from .telemetry import Query, TelemetryStore


def report_packets(result: RunResult, link_id: str) -> str:
    """Per-second packet counters for one link, as CSV."""
    if link_id not in result.packet_logs:
        raise UnknownLink(link_id)
    log = result.packet_logs[link_id]
    rows = packet_series(log, 0, int(math.ceil(result.scenario.schedule_end_s)))
    return packet_series_csv(rows)


def power_rows(store: TelemetryStore) -> list[dict]:
    """Hourly means of expected vs delivered MW from power-sample records."""
    samples = store.query(Query(kind="power-sample"))
    hours: dict[int, list[tuple[float, float]]] = {}
    for rec in samples:
        hours.setdefault(int(rec.ts.seconds // 3600), []).append(
            (rec.payload["expected_mw"], rec.payload["delivered_mw"])
        )
    rows = []
    for hour in sorted(hours):
        pairs = hours[hour]
        expected = sum(p[0] for p in pairs) / len(pairs)
        delivered = sum(p[1] for p in pairs) / len(pairs)
        rows.append({
            "hour": hour,
            "expected_mw": expected,
            "delivered_mw": delivered,
            "deviation_mw": expected - delivered,
        })
    return rows


def power_csv(rows: list[dict]) -> str:
    lines = ["hour,expected_mw,delivered_mw,deviation_mw"]
    for r in rows:
        lines.append(
            f"{r['hour']},{r['expected_mw']:.4f},{r['delivered_mw']:.4f},"
            f"{r['deviation_mw']:.4f}"
        )
    return "\n".join(lines) + "\n"


def report_power(result: RunResult) -> str:
    return power_csv(power_rows(result.store))


def report_fuzz(result: RunResult) -> str:
    if not result.fuzz_records:
        raise NoFuzzData("run produced no fuzz records")
    return fuzz_summary_csv(summarize_fuzz(result.fuzz_records))


def fuzz_records_from_store(store: TelemetryStore) -> list[FuzzRecord]:
    """Rebuild summary-grade fuzz records from persisted telemetry."""
    out = []
    for rec in store.query(Query(kind="fuzz-record")):
        p = rec.payload
        out.append(FuzzRecord(
            seq=p["seq"],
            action=p["action"],
            mutation=MutationMode(p["mutation"]),
            sent=b"",
            outcome=OutcomeCode(*p["outcome"]),
            latency_s=p["latency_ms"] / 1000.0,
            server_alive_after=p["server_alive_after"],
        ))
    return out


def write_outputs(result: RunResult, outdir) -> list[str]:
    """Write telemetry.jsonl plus every applicable CSV; returns written names."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    result.store.export_jsonl(outdir / "telemetry.jsonl")
    written.append("telemetry.jsonl")

    for link_id in sorted(result.packet_logs):
        name = f"packets_{link_id}.csv"
        (outdir / name).write_text(report_packets(result, link_id), encoding="utf-8")
        written.append(name)

    if result.store.query(Query(kind="power-sample")):
        (outdir / "power.csv").write_text(report_power(result), encoding="utf-8")
        written.append("power.csv")

    if result.fuzz_records:
        (outdir / "fuzz.csv").write_text(report_fuzz(result), encoding="utf-8")
        written.append("fuzz.csv")
    return written
