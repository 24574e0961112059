import numpy as np
import pytest

from cases import profile_doc, recover_labels
from srlena.actions import load_action_config
from srlena.errors import ConfigError
from srlena.parser import build_pattern_library, load_pattern_library
from srlena.synthgen import (
    GroupProfile,
    SynthProfile,
    generate_coded_lines,
    generate_raw_trace,
    inverse_action_map,
    load_profile,
    profile_from_dict,
)
from srlena.trace import CODES, SrlProcess


def _group(tm, init, n_units=2, lines=(50, 50), name="g"):
    return GroupProfile(name, n_units, np.asarray(tm, float), np.asarray(init, float), lines, (10.0, 1.0), schools=("A",))


def test_profile_validation():
    with pytest.raises(ConfigError, match="sum to 1"):
        _group(np.full((7, 7), 0.1), np.eye(7)[0])
    with pytest.raises(ConfigError, match="7x7 or 8x8"):
        _group(np.eye(3), np.eye(3)[0])
    with pytest.raises(ConfigError):
        SynthProfile((_group(np.eye(7), np.eye(7)[0]),), action_noise=1.0)


def test_absorbing_chain():
    units = generate_coded_lines(_group(np.eye(7), np.eye(7)[0]), seed=1)
    assert all(set(u.states) == {0} for u in units)


def test_uniform_transition_frequencies():
    grp = _group(np.full((7, 7), 1 / 7), np.full(7, 1 / 7), n_units=1, lines=(100_000, 100_000))
    states = np.asarray(generate_coded_lines(grp, seed=3)[0].states)
    counts = np.zeros((7, 7))
    np.add.at(counts, (states[:-1], states[1:]), 1)
    freq = counts / counts.sum(axis=1, keepdims=True)
    assert np.abs(freq - 1 / 7).max() < 0.01


def test_determinism_and_distinct_seeds():
    prof = load_profile()
    a = generate_coded_lines(prof, 5)
    b = generate_coded_lines(prof, 5)
    c = generate_coded_lines(prof, 6)
    assert [u.states for u in a] == [u.states for u in b]
    assert [u.metadata for u in a] == [u.metadata for u in b]
    assert [u.states for u in a] != [u.states for u in c]


def test_pure_planning_roundtrip():
    config = load_action_config()
    full = load_pattern_library(action_config=config)
    only = full.without(*[p.id for p in full if p.process is SrlProcess.PLANNING and p.id != "P06"])
    tm = np.zeros((7, 7))
    tm[:, 1] = 1.0
    trace = generate_raw_trace(_group(tm, np.eye(7)[1]), only, config, seed=0)
    for planted, got in recover_labels(trace, only, config).values():
        assert got == planted
        assert {g[0] for g in got} == {SrlProcess.PLANNING}


def test_zero_noise_roundtrip_and_coverage():
    config = load_action_config()
    lib = load_pattern_library(action_config=config)
    prof = profile_from_dict(profile_doc(3, 3, (100, 150)))
    trace = generate_raw_trace(prof, lib, config, seed=2)
    assert trace.action_noise_count == trace.event_noise_count == 0
    recovered = recover_labels(trace, lib, config)
    for planted, got in recovered.values():
        assert got == planted
    assert all(g[0] is not None for _, got in recovered.values() for g in got)


def test_action_noise_rate():
    config = load_action_config()
    lib = load_pattern_library(action_config=config)
    fractions = []
    for seed in range(3):
        trace = generate_raw_trace(profile_from_dict(profile_doc(4, 4, (300, 300), action_noise=0.1)), lib, config, seed)
        got = [g for _, rec in recover_labels(trace, lib, config).values() for g in rec]
        fractions.append(sum(g[0] is None for g in got) / len(got))
        for planted, rec in recover_labels(trace, lib, config).values():
            assert rec == planted
    assert abs(np.mean(fractions) - 0.10) < 0.02


def test_event_noise_is_dropped_by_mapper():
    config = load_action_config()
    lib = load_pattern_library(action_config=config)
    trace = generate_raw_trace(profile_from_dict(profile_doc(2, 2, (100, 100), event_noise=0.2)), lib, config, 4)
    assert trace.event_noise_count > 0
    for planted, got in recover_labels(trace, lib, config).values():
        assert got == planted


def test_refuses_missing_process_and_ambiguity():
    config = load_action_config()
    lib = load_pattern_library(action_config=config)
    no_planning = lib.without(*[p.id for p in lib if p.process is SrlProcess.PLANNING])
    with pytest.raises(ConfigError, match="Planning"):
        generate_raw_trace(load_profile(), no_planning, config, 0)

    ambiguous = build_pattern_library(
        {
            "patterns": [
                {"id": "a", "process": p.value, "sequence": [{"main": "TIMER", "sub": "Check_Timer"}, {"main": "TIMER", "sub": "Check_Timer"}]}
                for p in CODES[:1]
            ]
            + [{"id": f"b{i}", "process": p.value, "sequence": [{"main": "TIMER", "sub": "Check_Timer"}]} for i, p in enumerate(CODES)]
        }
    )
    with pytest.raises(ConfigError, match="ambiguous"):
        generate_raw_trace(load_profile(), ambiguous, config, 0)


def test_inverse_map_renders_back():
    from srlena.actions import map_events
    from srlena.trace import TraceEvent

    config = load_action_config()
    inverse = inverse_action_map(config)
    assert len(inverse) == len(config.vocabulary())
    for key, (kind, target) in inverse.items():
        (action,) = map_events([TraceEvent(0, "u", "s", kind, target)], config)
        assert action.key == key
