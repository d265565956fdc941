import json

import pytest

from evector.attacks import AttackKind, AttackPlan
from evector.model import EvConfig, EvseConfig, SimParams
from evector.reports import report_fuzz, report_packets, report_power, power_rows, write_outputs
from evector.runner import (
    DriverKind,
    NoFuzzData,
    RunExit,
    ScenarioInvalid,
    UnknownLink,
    run,
)
from evector.scenario import Scenario, parse_scenario
from evector.telemetry import Query


def small_scenario(**kwargs) -> Scenario:
    base = dict(
        evs=(EvConfig("EV1", 1.0, 0.9, 7.0, 0.0, "EVSE1"),),
        evses=(EvseConfig("EVSE1", 22.0),),
        schedule_end_s=300.0,
        seed=5,
    )
    base.update(kwargs)
    return Scenario(**base)


def transitions(result, session=None):
    recs = result.store.query(Query(kind="state-transition", session_id=session))
    return [(r.session_id, r.payload["from"], r.payload["to"]) for r in recs]


class TestBasicRuns:
    def test_empty_scenario_only_lifecycle_records(self):
        res = run(Scenario(evs=(), evses=()))
        kinds = [r.kind for r in res.store.records()]
        assert kinds == ["scenario-start", "scenario-end"]
        assert res.exit is RunExit.COMPLETED

    def test_charge_duration_matches_battery_arithmetic(self):
        # 10% of 1 kWh at 7 kW -> 0.1/7 h = 51.43 s of Charge, +- one tick
        res = run(small_scenario())
        recs = res.store.query(Query(kind="state-transition"))
        t_charge = next(r.ts.seconds for r in recs if r.payload["to"] == "charge")
        t_down = next(r.ts.seconds for r in recs if r.payload["to"] == "power-down")
        need = 3600.0 * 1.0 * 0.1 / 7.0
        assert abs((t_down - t_charge) - need) <= 1.0 + 1e-9

    def test_full_session_walk(self):
        res = run(small_scenario())
        walk = [(f, t) for _s, f, t in transitions(res)]
        assert walk == [
            ("unmated", "mated"),
            ("mated", "initialize"),
            ("initialize", "check"),
            ("check", "charge"),
            ("charge", "power-down"),
            ("power-down", "unmated"),
        ]

    def test_transition_chain_is_contiguous(self):
        res = run(small_scenario())
        by_session = {}
        for sid, frm, to in transitions(res):
            by_session.setdefault(sid, []).append((frm, to))
        for chain in by_session.values():
            for (f1, t1), (f2, t2) in zip(chain, chain[1:]):
                assert t1 == f2

    def test_liveness_completes_before_schedule_end(self):
        res = run(small_scenario())
        last = transitions(res)[-1]
        assert last[2] == "unmated"
        recs = res.store.query(Query(kind="state-transition"))
        assert recs[-1].ts.seconds < 300.0

    def test_soc_never_exceeds_one_and_energy_only_in_charge(self):
        res = run(small_scenario())
        kinds = {r.kind for r in res.store.records()}
        assert "error" not in kinds

    def test_user_interrupt_powers_down(self):
        sc = small_scenario(evs=(
            EvConfig("EV1", 50.0, 0.1, 7.0, 0.0, "EVSE1", interrupt_time_s=30.0),
        ))
        res = run(sc)
        walk = [(f, t) for _s, f, t in transitions(res)]
        assert ("charge", "power-down") in walk
        assert walk[-1][1] == "unmated"
        t_down = next(r.ts.seconds for r in res.store.query(Query(kind="state-transition"))
                      if r.payload["to"] == "power-down")
        assert abs(t_down - 30.0) < 0.01

    def test_occupied_evse_second_plug_in_errors(self):
        sc = small_scenario(evs=(
            EvConfig("EV1", 50.0, 0.1, 7.0, 0.0, "EVSE1"),
            EvConfig("EV2", 50.0, 0.1, 7.0, 10.0, "EVSE1"),
        ), schedule_end_s=60.0)
        res = run(sc)
        errors = res.store.query(Query(kind="error"))
        assert any(r.payload["code"] == "evse-occupied" for r in errors)
        # first session keeps charging
        assert all(sid == transitions(res)[0][0] for sid, _f, _t in transitions(res))

    def test_evse_freed_after_session(self):
        # EV2 plugs into the same EVSE after EV1 finished
        sc = small_scenario(evs=(
            EvConfig("EV1", 1.0, 0.9, 7.0, 0.0, "EVSE1"),
            EvConfig("EV2", 1.0, 0.9, 7.0, 120.0, "EVSE1"),
        ))
        res = run(sc)
        sessions = {sid for sid, _f, _t in transitions(res)}
        assert len(sessions) == 2
        assert not res.store.query(Query(kind="error"))

    def test_validation_gate(self):
        sc = small_scenario(evs=(EvConfig("EV1", 1.0, 0.9, 7.0, 0.0, "missing"),))
        with pytest.raises(ScenarioInvalid):
            run(sc)

    def test_seed_override_changes_scenario_seed(self):
        res = run(small_scenario(), seed=99)
        start = res.store.records()[0]
        assert start.payload["seed"] == 99


class TestDrivers:
    def test_mock_and_linked_state_sequences_match(self, scenario_text):
        sc = parse_scenario(scenario_text("baseline_day.scn"))
        mock_seq = transitions(run(sc, driver="mock"))
        linked_seq = transitions(run(sc, driver="linked"))
        assert mock_seq == linked_seq

    def test_mock_run_has_no_packet_logs(self):
        res = run(small_scenario(), driver=DriverKind.MOCK)
        assert res.packet_logs == {}

    def test_l1_attack_requires_linked_driver(self, scenario_text):
        sc = parse_scenario(scenario_text("broken_wire_l1.scn"))
        with pytest.raises(ScenarioInvalid):
            run(sc, driver="mock")

    def test_realtime_flag_does_not_change_records(self, tmp_path):
        sc = small_scenario(
            evs=(EvConfig("EV1", 0.01, 0.99, 7.0, 0.0, "EVSE1"),),
            schedule_end_s=0.5,
        )
        fast = run(sc)
        paced = run(sc, realtime=True)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        fast.store.export_jsonl(a)
        paced.store.export_jsonl(b)
        assert a.read_bytes() == b.read_bytes()


class TestV2gDirections:
    def test_requests_from_ev_responses_from_evse(self):
        res = run(small_scenario())
        for rec in res.store.query(Query(kind="v2g-msg")):
            kind = rec.payload["kind"]
            if kind.endswith("Req"):
                assert rec.source.startswith("ev:")
            else:
                assert rec.source.startswith("evse:")


@pytest.fixture(scope="module")
def result(scenario_text):
    return run(parse_scenario(scenario_text("broken_wire_l1.scn")))


class TestGoldenL1:
    def test_attack_start_recorded_at_18(self, result):
        recs = result.store.query(Query(kind="attack-start"))
        assert len(recs) == 1 and recs[0].ts.seconds == 18.0

    def test_session_times_out_within_bound(self, result):
        unmated = [r for r in result.store.query(Query(kind="state-transition"))
                   if r.payload["to"] == "unmated"]
        assert len(unmated) == 1
        # sever + status timeout + at most one heartbeat tick
        assert 18.0 <= unmated[0].ts.seconds <= 18.0 + 2.0 + 1.0

    def test_timeout_flag_set(self, result):
        unmated = [r for r in result.store.query(Query(kind="state-transition"))
                   if r.payload["to"] == "unmated"]
        assert unmated[0].payload["error_flag"] == "timeout:charge"


class TestSeverBeforePlugIn:
    def test_handshake_on_dead_link_times_out(self):
        sc = small_scenario(
            evs=(EvConfig("EV1", 1.0, 0.5, 7.0, 5.0, "EVSE1"),),
            attacks=(AttackPlan(AttackKind.BROKEN_WIRE_L1, "EV1--EVSE1", 0.0),),
            schedule_end_s=30.0,
        )
        res = run(sc)
        walk = transitions(res)
        assert [(f, t) for _s, f, t in walk] == [
            ("unmated", "mated"),
            ("mated", "unmated"),
        ]
        last = res.store.query(Query(kind="state-transition"))[-1]
        assert last.payload["error_flag"] == "timeout:mated"
        # setup request sent at 5.2, deadline two seconds later
        assert last.ts.seconds == pytest.approx(7.2)


class TestReports:
    def test_report_packets_unknown_link(self):
        res = run(small_scenario())
        with pytest.raises(UnknownLink):
            report_packets(res, "nope")

    def test_report_fuzz_without_fuzz_data(self):
        res = run(small_scenario())
        with pytest.raises(NoFuzzData):
            report_fuzz(res)

    def test_report_power_no_attack_zero_deviation(self):
        res = run(small_scenario())
        for row in power_rows(res.store):
            assert row["deviation_mw"] == pytest.approx(0.0, abs=1e-9)

    def test_write_outputs_produces_files(self, tmp_path, scenario_text):
        res = run(parse_scenario(scenario_text("broken_wire_l1.scn")))
        written = write_outputs(res, tmp_path)
        assert "telemetry.jsonl" in written
        assert "packets_EV1--EVSE1.csv" in written
        assert "power.csv" in written
        assert (tmp_path / "telemetry.jsonl").exists()

    def test_power_csv_header(self):
        res = run(small_scenario())
        header = report_power(res).splitlines()[0]
        assert header == "hour,expected_mw,delivered_mw,deviation_mw"


class TestCli:
    def test_run_and_report_round_trip(self, tmp_path, scenario_text, capsys):
        from evector.cli import main
        scn = tmp_path / "s.scn"
        scn.write_text(scenario_text("fuzz_random.scn"))
        out = tmp_path / "out"
        assert main(["run", str(scn), "--out", str(out)]) == 0
        assert (out / "telemetry.jsonl").exists()
        assert (out / "fuzz.csv").exists()
        assert main(["report", str(out), "--kind", "fuzz"]) == 0
        captured = capsys.readouterr().out
        assert "Heartbeat,100.0" in captured

    def test_run_bad_scenario_exits_2(self, tmp_path):
        from evector.cli import main
        scn = tmp_path / "bad.scn"
        scn.write_text('{"evs": [], "evses": [], "bogus": 1}')
        assert main(["run", str(scn), "--out", str(tmp_path / "o")]) == 2

    def test_run_unresolved_reference_exits_2(self, tmp_path):
        from evector.cli import main
        scn = tmp_path / "bad.scn"
        scn.write_text(json.dumps({
            "evs": [{"id": "EV1", "battery_capacity_kwh": 1, "initial_soc": 0.5,
                     "max_charge_rate_kw": 7, "target_evse": "ghost"}],
            "evses": [],
        }))
        assert main(["run", str(scn), "--out", str(tmp_path / "o")]) == 2

    def test_report_packets_and_power_via_cli(self, tmp_path, scenario_text, capsys):
        from evector.cli import main
        scn = tmp_path / "s.scn"
        scn.write_text(scenario_text("broken_wire_l1.scn"))
        out = tmp_path / "out"
        assert main(["run", str(scn), "--out", str(out)]) == 0
        assert main(["report", str(out), "--kind", "packets"]) == 0
        assert "t,sent,delivered,retransmitted,errored" in capsys.readouterr().out
        assert main(["report", str(out), "--kind", "power"]) == 0
        assert "hour,expected_mw" in capsys.readouterr().out
