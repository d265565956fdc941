import pytest

from evector.attacks import AttackKind, AttackPlan
from evector.model import EvConfig, EvseConfig
from evector.scenario import (
    Scenario,
    SchemaError,
    ScenarioSyntaxError,
    parse_scenario,
    serialize_scenario,
    validate_scenario,
)

MINIMAL = """
{
  "evs": [{"id": "EV1", "battery_capacity_kwh": 50, "initial_soc": 0.2,
           "max_charge_rate_kw": 7, "target_evse": "EVSE1"}],
  "evses": [{"id": "EVSE1", "max_power_kw": 22}]
}
"""


class TestParse:
    def test_minimal_document_fills_defaults(self):
        sc = parse_scenario(MINIMAL)
        assert sc.evses[0].charge_status_timeout_s == 2.0
        assert sc.evses[0].heartbeat_interval_s == 1.0
        assert sc.attacks == ()
        assert sc.schedule_end_s > 0
        assert len(sc.baseline_load_profile) == 24

    def test_soc_out_of_range_names_path(self):
        bad = MINIMAL.replace('"initial_soc": 0.2', '"initial_soc": 1.5')
        with pytest.raises(SchemaError) as err:
            parse_scenario(bad)
        assert err.value.path == "evs[0].initial_soc"

    def test_golden_l1_scenario(self, scenario_text):
        sc = parse_scenario(scenario_text("broken_wire_l1.scn"))
        assert len(sc.attacks) == 1
        plan = sc.attacks[0]
        assert plan.kind is AttackKind.BROKEN_WIRE_L1
        assert plan.start_s == 18.0

    def test_not_json_is_syntax_error(self):
        with pytest.raises(ScenarioSyntaxError):
            parse_scenario("{nope")

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(SchemaError) as err:
            parse_scenario('{"evs": [], "evses": [], "extra": 1}')
        assert "extra" in str(err.value)

    def test_unknown_nested_key_rejected(self):
        bad = MINIMAL.replace('"max_power_kw": 22', '"max_power_kw": 22, "color": "red"')
        with pytest.raises(SchemaError):
            parse_scenario(bad)

    def test_missing_required_field(self):
        with pytest.raises(SchemaError) as err:
            parse_scenario('{"evs": [{"id": "x"}], "evses": []}')
        assert "evs[0]." in err.value.path

    def test_bad_seed(self):
        with pytest.raises(SchemaError):
            parse_scenario('{"evs": [], "evses": [], "seed": -1}')
        with pytest.raises(SchemaError):
            parse_scenario('{"evs": [], "evses": [], "seed": 1.5}')

    def test_bad_profile_length(self):
        with pytest.raises(SchemaError):
            parse_scenario('{"evs": [], "evses": [], "baseline_load_profile": [1, 2]}')


class TestRoundTrip:
    def test_identity_on_golden_scenarios(self, scenario_text):
        for name in ("broken_wire_l1.scn", "broken_wire_l3.scn",
                     "fuzz_random.scn", "baseline_day.scn"):
            sc = parse_scenario(scenario_text(name))
            assert parse_scenario(serialize_scenario(sc)) == sc

    def test_identity_with_optionals(self):
        sc = parse_scenario(MINIMAL)
        assert parse_scenario(serialize_scenario(sc)) == sc


def _scenario(**kwargs) -> Scenario:
    base = dict(
        evs=(EvConfig("EV1", 50.0, 0.2, 7.0, 0.0, "EVSE1"),),
        evses=(EvseConfig("EVSE1", 22.0),),
    )
    base.update(kwargs)
    return Scenario(**base)


class TestValidate:
    def test_valid_scenario_has_no_violations(self):
        assert validate_scenario(_scenario()) == []

    def test_occupancy_conflict_names_both_evs(self):
        sc = _scenario(evs=(
            EvConfig("EV1", 50.0, 0.2, 7.0, 0.0, "EVSE1"),
            EvConfig("EV2", 30.0, 0.1, 7.0, 0.0, "EVSE1"),
        ))
        violations = validate_scenario(sc)
        assert len(violations) == 1
        assert "EV1" in violations[0].reason and "EV2" in violations[0].reason

    def test_staggered_plug_ins_are_fine(self):
        sc = _scenario(evs=(
            EvConfig("EV1", 50.0, 0.2, 7.0, 0.0, "EVSE1"),
            EvConfig("EV2", 30.0, 0.1, 7.0, 500.0, "EVSE1"),
        ))
        assert validate_scenario(sc) == []

    def test_unresolved_attack_target(self):
        sc = _scenario(attacks=(
            AttackPlan(AttackKind.BROKEN_WIRE_L3, "ghost", 0.0, duration_s=10.0),
        ))
        violations = validate_scenario(sc)
        assert len(violations) == 1
        assert "ghost" in violations[0].reason

    def test_unresolved_target_evse(self):
        sc = _scenario(evs=(EvConfig("EV1", 50.0, 0.2, 7.0, 0.0, "nowhere"),))
        assert any("nowhere" in str(v) for v in validate_scenario(sc))

    def test_l3_requires_duration(self):
        sc = _scenario(attacks=(AttackPlan(AttackKind.BROKEN_WIRE_L3, "*", 0.0),))
        assert any("duration" in str(v) for v in validate_scenario(sc))

    def test_fuzz_requires_strategy(self):
        sc = _scenario(attacks=(AttackPlan(AttackKind.FUZZIFICATION, "csms", 0.0),))
        assert any("strategy" in str(v) for v in validate_scenario(sc))

    def test_duplicate_ids(self):
        sc = _scenario(evses=(EvseConfig("EVSE1", 22.0), EvseConfig("EVSE1", 11.0)))
        assert any("duplicate" in str(v) for v in validate_scenario(sc))
