"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is
printed in the terminal summary. Run alone with ``pytest tests/test_acceptance.py``."""

import json
import time

import numpy as np
import pytest

from cases import (
    accumulation_case,
    build_library,
    ols_case,
    parser_case,
    profile_doc,
    recover_labels,
    to_actions,
)
from oracles import brute_accumulate, brute_parse, normal_equations
from srlena.actions import load_action_config
from srlena.ena import accumulate, fit_ena, pair_position
from srlena.parser import label_actions, load_pattern_library, shadowing_pairs
from srlena.pipeline import PipelineConfig, run_pipeline
from srlena.report import render_table
from srlena.stats import DesignMatrix, bootstrap_ci, ols_fit
from srlena.synthgen import generate_coded_lines, generate_raw_trace, load_profile, profile_from_dict
from srlena.trace import SrlProcess, write_metadata, write_trace
from table_fixture import HEADERS, RESULTS


@pytest.mark.criterion(1, "accumulation matches brute-force window enumeration on 1,000 cases in < 10 s")
def test_accumulation_oracle():
    rng = np.random.default_rng(20240101)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        lines, window = accumulation_case(rng)
        k = lines.shape[1]
        got = accumulate(lines, window, n_codes=k).raw.tolist()
        mismatches += got != brute_accumulate(lines, window, k)
    elapsed = time.perf_counter() - start
    assert mismatches == 0
    assert elapsed < 10, f"{elapsed:.1f}s"


def _greedy_properties_hold(labelled, patterns):
    """Longest match and rank tie-break at every position the parser started a match."""
    by_id = {p[0]: p for p in patterns}
    pairs = [(la.action.main_action, la.action.sub_action) for la in labelled]

    def matches(p, c):
        seq = p[2]
        window = pairs[c : c + len(seq)]
        return len(window) == len(seq) and all(a[0] == m[0] and m[1] in ("*", a[1]) for a, m in zip(window, seq))

    for c, la in enumerate(labelled):
        if la.process is None or la.match_position != 0:
            continue
        chosen = by_id[la.pattern_id]
        for p in patterns:
            if not matches(p, c):
                continue
            if len(p[2]) > len(chosen[2]):
                return False
            if len(p[2]) == len(chosen[2]) and p[3] < chosen[3]:
                return False
    return True


@pytest.mark.criterion(2, "parser matches brute-force matcher on 500 cases; longest-match and tie-break hold")
def test_parser_oracle():
    rng = np.random.default_rng(77)
    mismatches = violations = 0
    for _ in range(500):
        patterns, pairs = parser_case(rng)
        labelled = label_actions(to_actions(pairs), build_library(patterns))
        got = [None if la.process is None else (la.process, la.pattern_id, la.match_position) for la in labelled]
        mismatches += got != brute_parse(pairs, patterns)
        violations += not _greedy_properties_hold(labelled, patterns)
    assert mismatches == 0
    assert violations == 0


@pytest.mark.criterion(3, "zero-noise synthgen -> map -> label recovers planted processes for 100 units")
def test_round_trip():
    config = load_action_config()
    library = load_pattern_library(action_config=config)
    assert shadowing_pairs(library) == []
    profile = profile_from_dict(profile_doc(50, 50))
    trace = generate_raw_trace(profile, library, config, seed=3)
    recovered = recover_labels(trace, library, config)
    assert len(recovered) == 100
    bad = [u for u, (planted, got) in recovered.items() if planted != got]
    assert bad == []


@pytest.mark.criterion(4, "means-rotation invariants on 125 synthetic units")
def test_means_rotation_invariants():
    units = generate_coded_lines(load_profile(), seed=11)
    assert len(units) == 125
    model = fit_ena({u.unit_id: u.lines for u in units}, {u.unit_id: u.group for u in units}, ("low", "high"))
    space = model.space
    basis = space.basis
    assert np.abs(basis.T @ basis - np.eye(basis.shape[1])).max() < 1e-9

    fitted = space.fit_mask
    groups = np.array(model.groups)
    a = space.scores[fitted & (groups == "low")].mean(axis=0)
    b = space.scores[fitted & (groups == "high")].mean(axis=0)
    assert np.abs(a[1:] - b[1:]).max() < 1e-9

    x = model.data.centered[fitted]
    g = groups[fitted] == "low"
    diff = x[g].mean(axis=0) - x[~g].mean(axis=0)
    mr1_sep = abs(diff @ basis[:, 0])
    dirs = np.random.default_rng(5).normal(size=(1000, x.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    assert (np.abs(dirs @ diff) <= mr1_sep + 1e-12).all()

    assert abs(space.variance_explained.sum() - 1.0) < 1e-9


@pytest.mark.criterion(5, "OLS matches normal equations on 200 designs within 1e-9")
def test_ols_oracle():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(200):
        X, y = ols_case(rng)
        cols = {"intercept": X[:, 0], **{f"x{i}": X[:, i] for i in range(1, X.shape[1])}}
        res = ols_fit(DesignMatrix(y, cols))
        beta, se, r2 = normal_equations(X, y)
        worst = max(
            worst,
            np.abs(np.array([res.coefficients[n] for n in res.names]) - beta).max(),
            np.abs(np.array([res.standard_errors[n] for n in res.names]) - se).max(),
            abs(res.r_squared - r2),
        )
    assert worst < 1e-9, worst


@pytest.mark.criterion(6, "bootstrap 95% CI covers planted beta in 95 +/- 3% of 500 replications in < 5 min")
def test_bootstrap_coverage():
    start = time.perf_counter()
    covered = 0
    for rep in range(500):
        rng = np.random.default_rng([2024, rep])
        x = rng.normal(size=200)
        y = 1.0 + 0.5 * x + rng.normal(size=200)
        ci = bootstrap_ci(DesignMatrix(y, {"intercept": np.ones(200), "x": x}), B=1000, alpha=0.05, seed=rep)
        lo, hi = ci["x"]
        covered += lo <= 0.5 <= hi
    elapsed = time.perf_counter() - start
    rate = covered / 500
    print(f"coverage {rate:.3f} in {elapsed:.1f}s")
    assert 0.92 <= rate <= 0.98, rate
    assert elapsed < 300


def _write_synthetic(tmp_path, doc, seed):
    config = load_action_config()
    library = load_pattern_library(action_config=config)
    trace = generate_raw_trace(profile_from_dict(doc), library, config, seed)
    write_trace(trace.events, tmp_path / "trace.csv")
    write_metadata(trace.metadata, tmp_path / "meta.csv")


def _run(tmp_path, out, **kw):
    cfg = PipelineConfig(
        trace=str(tmp_path / "trace.csv"),
        metadata=str(tmp_path / "meta.csv"),
        out_dir=str(tmp_path / out),
        school_reference="A",
        **kw,
    )
    run_pipeline(cfg)
    return tmp_path / out


@pytest.mark.criterion(7, "planted RR-EO difference recovered for 10/10 seeds; 125 units x 10,000 lines in < 60 s")
def test_end_to_end_planted_effect(tmp_path):
    rr_eo = pair_position(SrlProcess.RE_READING, SrlProcess.ELABORATION_ORGANISATION)
    failures = []
    for seed in range(10):
        d = tmp_path / f"s{seed}"
        d.mkdir()
        _write_synthetic(d, profile_doc(63, 62, action_noise=0.05, event_noise=0.05), seed)
        out = _run(d, "out", seed=seed)
        sub = json.loads((out / "subtraction_high_low.json").read_text())
        reg = json.loads((out / "regression_M1.json").read_text())
        coef = reg["coefficients"]["performance_low"]
        weight = list(sub["weights"].values())[rr_eo]
        ok = weight > 0 and coef["beta"] > 0 and coef["p"] < 0.01 and abs(reg["cohens_d"]) > 0.5
        if not ok:
            failures.append((seed, weight, coef["beta"], coef["p"], reg["cohens_d"]))
    assert failures == []

    big = tmp_path / "big"
    big.mkdir()
    _write_synthetic(big, profile_doc(63, 62, lines=(5700, 5700), action_noise=0.05, event_noise=0.05), 123)
    start = time.perf_counter()
    out = _run(big, "out")
    elapsed = time.perf_counter() - start
    coverage = json.loads((out / "coverage_label.json").read_text())
    per_unit = [s["total"] for s in coverage["sessions"].values()]
    print(f"{len(per_unit)} units, min {min(per_unit)} lines, {elapsed:.1f}s")
    assert len(per_unit) == 125 and min(per_unit) >= 10_000
    assert elapsed < 60, f"{elapsed:.1f}s"


@pytest.mark.criterion(8, "two pipeline runs with one config give byte-identical outputs")
def test_determinism(tmp_path):
    _write_synthetic(tmp_path, profile_doc(15, 15, (150, 200), action_noise=0.05, event_noise=0.05), 8)
    out = _run(tmp_path, "out", bootstrap=300)
    first = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    _run(tmp_path, "out", bootstrap=300)
    second = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    assert first.keys() == second.keys()
    for name in first:
        if name == "manifest.json":
            a, b = json.loads(first[name]), json.loads(second[name])
            a.pop("created"), b.pop("created")
            assert a == b
        else:
            assert first[name] == second[name], name


@pytest.mark.criterion(9, "regression table reproduces stars, parenthesized SEs and dashes on the golden fixture")
def test_golden_table():
    from pathlib import Path

    golden = (Path(__file__).parent / "fixtures" / "table_golden.txt").read_text()
    assert render_table(RESULTS, HEADERS) == golden
