import pytest

from evector.model import SimTime
from evector.telemetry import (
    FormatError,
    OutOfOrder,
    Query,
    TelemetryRecord,
    TelemetryStore,
)


def rec(t, seq=0, kind="state-transition", source="ev:EV1", **kwargs):
    return TelemetryRecord(ts=SimTime(t, seq), source=source, kind=kind,
                           payload=kwargs.pop("payload", {"n": seq}), **kwargs)


class TestAppend:
    def test_append_grows_store(self):
        store = TelemetryStore()
        store.append(rec(0.0))
        assert len(store) == 1

    def test_ts_regression_rejected(self):
        store = TelemetryStore()
        store.append(rec(5.0, 2))
        with pytest.raises(OutOfOrder):
            store.append(rec(4.0, 3))
        with pytest.raises(OutOfOrder):
            store.append(rec(5.0, 1))

    def test_equal_ts_allowed(self):
        store = TelemetryStore()
        store.append(rec(5.0, 2))
        store.append(rec(5.0, 2))
        assert len(store) == 2

    def test_many_appends_preserve_order(self):
        store = TelemetryStore()
        for i in range(10_000):
            store.append(rec(float(i) / 10.0, i))
        out = store.query(Query())
        assert len(out) == 10_000
        assert [r.ts.seq for r in out] == list(range(10_000))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            rec(0.0, kind="bogus")

    def test_bad_source_rejected(self):
        with pytest.raises(ValueError):
            rec(0.0, source="martian:1")

    def test_bad_layer_rejected(self):
        with pytest.raises(ValueError):
            rec(0.0, layer="L9")


class TestQuery:
    def _store(self):
        store = TelemetryStore()
        store.append(rec(1.0, 1, kind="state-transition", session_id="s1"))
        store.append(rec(2.0, 2, kind="v2g-msg", source="evse:E1", session_id="s1"))
        store.append(rec(3.0, 3, kind="attack-start", source="attack", layer="L1"))
        return store

    def test_empty_query_returns_everything(self):
        store = self._store()
        assert store.query(Query()) == store.records()

    def test_kind_filter(self):
        assert len(self._store().query(Query(kind="v2g-msg"))) == 1

    def test_source_filter(self):
        assert len(self._store().query(Query(source="attack"))) == 1

    def test_session_filter(self):
        assert len(self._store().query(Query(session_id="s1"))) == 2

    def test_time_range(self):
        assert len(self._store().query(Query(time_range=(1.5, 2.5)))) == 1

    def test_disjoint_time_range_empty(self):
        assert self._store().query(Query(time_range=(100.0, 200.0))) == []

    def test_combined_filters(self):
        out = self._store().query(Query(kind="v2g-msg", session_id="s1"))
        assert len(out) == 1 and out[0].source == "evse:E1"


class TestJsonl:
    def test_round_trip_with_optionals(self, tmp_path):
        store = TelemetryStore()
        store.append(rec(0.5, 1))
        store.append(rec(1.0, 2, kind="attack-start", source="attack", layer="L3",
                         session_id="s9", payload={"k": [1, 2], "s": "x"}))
        path = tmp_path / "t.jsonl"
        store.export_jsonl(path)
        again = TelemetryStore.load_jsonl(path)
        assert again.records() == store.records()

    def test_absent_optionals_are_omitted(self, tmp_path):
        store = TelemetryStore()
        store.append(rec(0.5, 1))
        path = tmp_path / "t.jsonl"
        store.export_jsonl(path)
        line = path.read_text().strip()
        assert "session_id" not in line and "layer" not in line

    def test_empty_store_round_trip(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        TelemetryStore().export_jsonl(path)
        assert path.read_text() == ""
        assert len(TelemetryStore.load_jsonl(path)) == 0

    def test_truncated_line_names_line_number(self, tmp_path):
        store = TelemetryStore()
        store.append(rec(0.5, 1))
        store.append(rec(1.5, 2))
        path = tmp_path / "t.jsonl"
        store.export_jsonl(path)
        broken = path.read_text().splitlines()
        broken[1] = broken[1][: len(broken[1]) // 2]
        path.write_text("\n".join(broken) + "\n")
        with pytest.raises(FormatError) as err:
            TelemetryStore.load_jsonl(path)
        assert "line 2" in str(err.value)
