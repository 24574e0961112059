import json

import pytest

from srlena.errors import SchemaError
from srlena.trace import (
    EducationLevel,
    SessionMetadata,
    SrlProcess,
    TraceEvent,
    format_detail,
    load_metadata,
    load_trace,
    parse_detail,
    sessionize,
    write_metadata,
    write_trace,
)


def _meta(level="SE", **kw):
    base = dict(education_level=level, essay_score=10.0, pretest_score=8.0, task_length_minutes=30.0, school_id="A")
    base.update(kw)
    return SessionMetadata(**base)


def test_detail_roundtrip():
    pairs = (("page", "3"), ("note", "a b"))
    assert parse_detail(format_detail(pairs)) == pairs
    assert parse_detail("") == ()
    with pytest.raises(ValueError):
        parse_detail("novalue")
    with pytest.raises(ValueError):
        format_detail([("k", "a;b")])


def test_metadata_validation():
    with pytest.raises(ValueError):
        _meta(pretest_score=16)
    with pytest.raises(ValueError):
        _meta(task_length_minutes=0)
    with pytest.raises(ValueError):
        _meta(level="SE", cet4_score=500.0)
    assert _meta(level="HE", cet4_score=500.0).education_level is EducationLevel.HE


def test_process_codes_are_ordered():
    assert [p.value for p in SrlProcess][:2] == ["Orientation", "Planning"]
    assert SrlProcess.ELABORATION_ORGANISATION.index == 6
    with pytest.raises(ValueError, match="unknown SRL process"):
        SrlProcess.parse("Daydreaming")


def test_empty_ids_rejected():
    with pytest.raises(SchemaError):
        TraceEvent(0, "", "s", "k")


@pytest.mark.parametrize("suffix", [".csv", ".json"])
def test_trace_roundtrip(tmp_path, suffix):
    events = [
        TraceEvent(5, "u1", "s1", "page_open", "relevant/new", (("page", "2"),)),
        TraceEvent(0, "u1", "s1", "note_create", "", ()),
        TraceEvent(7, "u2", "s1", "timer_check", "x,y \"quoted\"", (("a", "1"), ("b", ""))),
    ]
    path = tmp_path / f"trace{suffix}"
    write_trace(events, path)
    assert load_trace(path) == events


def test_iso_timestamps_are_rebased(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(
        "timestamp,user_id,server_id,event_kind,target,detail\n"
        "2024-01-01T10:00:01Z,u,s,a,,\n"
        "2024-01-01T10:00:00Z,u,s,b,,\n"
    )
    assert [e.timestamp for e in load_trace(path)] == [1000, 0]


def test_schema_errors_name_row_and_field(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("timestamp,user_id,server_id,event_kind,target,detail\n1,u,s,k,,\nlater,u,s,k,,\n")
    with pytest.raises(SchemaError) as info:
        load_trace(path)
    assert info.value.row == 3 and info.value.field == "timestamp"

    path.write_text("timestamp,user_id,server_id,event_kind,target,detail\n1,u,,k,,\n")
    with pytest.raises(SchemaError) as info:
        load_trace(path)
    assert info.value.field == "server_id"

    path.write_text("ts,user\n")
    with pytest.raises(SchemaError):
        load_trace(path)

    bad = tmp_path / "t.json"
    bad.write_text(json.dumps({"events": [{"timestamp": 1, "user_id": "u", "server_id": "s"}]}))
    with pytest.raises(SchemaError) as info:
        load_trace(bad)
    assert info.value.row == 0 and info.value.field == "event_kind"


def test_metadata_roundtrip(tmp_path):
    table = {("u1", "s"): _meta(), ("u2", "s"): _meta(level="HE", cet4_score=480.5, essay_score=12.25)}
    path = tmp_path / "m.csv"
    write_metadata(table, path)
    assert load_metadata(path) == table


def test_sessionize_stable_sort():
    evs = [
        TraceEvent(10, "b", "s", "x"),
        TraceEvent(5, "a", "s", "first"),
        TraceEvent(5, "a", "s", "second"),
        TraceEvent(1, "a", "s", "zero"),
    ]
    sessions = sessionize(evs, {("a", "s"): _meta(), ("b", "s"): _meta()})
    assert [s.unit_id for s in sessions] == [("a", "s"), ("b", "s")]
    assert [e.event_kind for e in sessions[0].events] == ["zero", "first", "second"]


def test_sessionize_errors():
    with pytest.raises(ValueError):
        sessionize([], {})
    with pytest.raises(KeyError):
        sessionize([TraceEvent(0, "a", "s", "x")], {})
