import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cases import MAINS, SUBS, build_library, parser_case, to_actions
from oracles import brute_parse
from srlena.actions import load_action_config
from srlena.errors import ConfigError
from srlena.parser import (
    build_pattern_library,
    label_actions,
    label_coverage,
    load_pattern_library,
    read_labelled,
    shadowing_pairs,
    write_labelled,
)
from srlena.trace import CODES, MainAction, SrlProcess


def _labels(labelled):
    return [None if la.process is None else (la.process, la.pattern_id, la.match_position) for la in labelled]


def test_longest_match_wins():
    lib = build_pattern_library(
        {
            "patterns": [
                {"id": "short", "process": "Planning", "sequence": [{"main": "PLANNER", "sub": "Open_Planner"}]},
                {
                    "id": "long",
                    "process": "Monitoring",
                    "sequence": [{"main": "PLANNER", "sub": "Open_Planner"}, {"main": "PLANNER", "sub": "Read_Plan"}],
                },
            ]
        }
    )
    acts = to_actions([(MainAction.PLANNER, "Open_Planner"), (MainAction.PLANNER, "Read_Plan"), (MainAction.PLANNER, "Open_Planner")])
    out = label_actions(acts, lib)
    assert [la.pattern_id for la in out] == ["long", "long", "short"]
    assert [la.match_position for la in out] == [0, 1, 0]


def test_equal_length_tie_goes_to_file_order():
    seq = [{"main": "TIMER", "sub": "*"}]
    lib = build_pattern_library(
        {"patterns": [{"id": "first", "process": "Orientation", "sequence": seq}, {"id": "second", "process": "Evaluation", "sequence": seq}]}
    )
    out = label_actions(to_actions([(MainAction.TIMER, "Check_Timer")]), lib)
    assert out[0].process is SrlProcess.ORIENTATION


def test_no_match_advances_by_one():
    lib = build_pattern_library(
        {"patterns": [{"id": "p", "process": "Planning", "sequence": [{"main": "ESSAY", "sub": "a"}, {"main": "ESSAY", "sub": "b"}]}]}
    )
    acts = to_actions([(MainAction.ESSAY, "a"), (MainAction.ESSAY, "a"), (MainAction.ESSAY, "b")])
    assert [la.pattern_id for la in label_actions(acts, lib)] == [None, "p", "p"]


def test_library_errors():
    with pytest.raises(ConfigError, match="unknown SRL process"):
        build_pattern_library({"patterns": [{"id": "x", "process": "Nap", "sequence": [{"main": "TIMER"}]}]})
    with pytest.raises(ConfigError, match="empty sequence"):
        build_pattern_library({"patterns": [{"id": "x", "process": "Planning", "sequence": []}]})
    with pytest.raises(ConfigError, match="duplicate"):
        entry = {"id": "x", "process": "Planning", "sequence": [{"main": "TIMER"}]}
        build_pattern_library({"patterns": [entry, entry]})
    with pytest.raises(ConfigError, match="unknown sub action"):
        build_pattern_library(
            {"patterns": [{"id": "x", "process": "Planning", "sequence": [{"main": "TIMER", "sub": "Nope"}]}]},
            load_action_config(),
        )


def test_default_library():
    lib = load_pattern_library(action_config=load_action_config())
    assert len(lib) == 32
    assert lib.processes() == set(CODES)
    assert shadowing_pairs(lib) == []


def test_shadowing_detects_prefix():
    lib = build_pattern_library(
        {
            "patterns": [
                {"id": "a", "process": "Planning", "sequence": [{"main": "TIMER"}, {"main": "ESSAY"}]},
                {"id": "b", "process": "Planning", "sequence": [{"main": "TIMER", "sub": "Check_Timer"}]},
            ]
        }
    )
    assert shadowing_pairs(lib) == [("a", "b")]


def test_coverage_counts():
    lib = load_pattern_library()
    p06 = lib.by_id("P06")
    acts = to_actions([(m.main_action, m.sub_action) for m in p06.sequence] + [(MainAction.TIMER, "Close_Timer")])
    cov = label_coverage(label_actions(acts, lib))
    assert cov.instance_counts[SrlProcess.PLANNING] == 1
    assert cov.action_counts[SrlProcess.PLANNING] == len(p06)
    assert cov.unlabelled == 1
    assert cov.unlabelled_fraction == pytest.approx(1 / (len(p06) + 1))
    assert label_coverage([]).unlabelled_fraction == 0.0


def test_labelled_file_roundtrip(tmp_path):
    lib = load_pattern_library()
    acts = to_actions([(MainAction.TIMER, "Check_Timer"), (MainAction.TIMER, "Close_Timer")])
    units = {("u", "s"): label_actions(acts, lib)}
    write_labelled(units, tmp_path / "l.csv")
    back = read_labelled(tmp_path / "l.csv")
    assert _labels(back[("u", "s")]) == _labels(units[("u", "s")])
    assert [la.action.key for la in back[("u", "s")]] == [a.key for a in acts]


@pytest.mark.parametrize("seed", range(50))
def test_matches_brute_force(seed):
    patterns, pairs = parser_case(np.random.default_rng(seed))
    got = _labels(label_actions(to_actions(pairs), build_library(patterns)))
    assert got == brute_parse(pairs, patterns)


action = st.tuples(st.sampled_from(MAINS), st.sampled_from(SUBS))
matcher = st.tuples(st.sampled_from(MAINS), st.sampled_from(SUBS + ("*",)))


@settings(max_examples=150, deadline=None)
@given(
    seqs=st.lists(st.lists(matcher, min_size=1, max_size=3), min_size=1, max_size=5),
    pairs=st.lists(action, max_size=30),
)
def test_labels_partition_the_stream(seqs, pairs):
    patterns = [(f"P{i}", CODES[i % len(CODES)], s, i) for i, s in enumerate(seqs)]
    lib = build_library(patterns)
    out = label_actions(to_actions(pairs), lib)
    assert len(out) == len(pairs)
    # every labelled run is a complete, in-order instance of its pattern
    i = 0
    while i < len(out):
        la = out[i]
        if la.process is None:
            i += 1
            continue
        pat = lib.by_id(la.pattern_id)
        assert [x.match_position for x in out[i : i + len(pat)]] == list(range(len(pat)))
        assert pat.matches_at([x.action for x in out], i)
        i += len(pat)
    assert _labels(out) == brute_parse(pairs, patterns)
