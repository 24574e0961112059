"""End-to-end orchestration: map -> label -> ena -> compare, plus report rendering.

Every stage reads and writes plain files in the output directory so each can
also run on its own from the command line.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy

from . import __version__
from .actions import load_action_config, map_sessions, write_actions, read_actions
from .ena import CENTROID_CONVENTION, EnaSpace, MeanNetwork, NodeFit, SubtractionNetwork, fit_ena, labelled_to_lines, pair_labels
from .errors import StageError
from .parser import label_actions, label_coverage, load_pattern_library, read_labelled, write_labelled
from .report import render_network, render_table
from .stats import (
    MODEL_FACTOR,
    RegressionResult,
    bootstrap_ci,
    build_design,
    cohens_d,
    cohens_d_ci,
    interaction_scan,
    median_split,
    ols_fit,
)
from .trace import CODES, EducationLevel, SessionMetadata, UnitId, load_metadata, load_trace, sessionize

STAGES = ("map", "label", "ena", "compare")
GROUP_ORDER = {"performance": ("low", "high"), "level": ("SE", "HE")}


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(obj, path: Path) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2) + "\n", encoding="utf-8")


def _unit_key(unit: UnitId) -> str:
    return f"{unit[0]}/{unit[1]}"


# --- configuration ----------------------------------------------------------


@dataclass
class PipelineConfig:
    trace: str
    metadata: str
    out_dir: str
    action_config: str | None = None
    pattern_library: str | None = None
    window: int = 50
    groups: str = "performance"
    level: str | None = None
    model: str = "M1"
    bootstrap: int = 1000
    alpha: float = 0.05
    seed: int = 42
    tie: str = "low"
    drop_unlabelled: bool = False
    coalesce_ms: int = 0
    school_reference: str | None = None
    n_dims: int = 2
    trace_format: str | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        cfg = cls.from_dict(json.loads(path.read_text("utf-8")))
        # relative paths resolve against the config file's directory
        for name in ("trace", "metadata", "out_dir", "action_config", "pattern_library"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, name, str(path.parent / value))
        return cfg

    def validate(self) -> None:
        """Check invariants; file problems raise a StageError naming the stage that reads the file."""
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.groups not in GROUP_ORDER:
            raise ValueError(f"groups must be one of {sorted(GROUP_ORDER)}")
        if self.model not in MODEL_FACTOR:
            raise ValueError(f"model must be one of {sorted(MODEL_FACTOR)}")
        expected = "level" if self.model == "M3" else "performance"
        if self.groups != expected:
            raise ValueError(f"model {self.model} compares groups by {expected}, not {self.groups}")
        if self.level is not None:
            EducationLevel(self.level)
        if self.model == "M1" and self.school_reference is None:
            raise ValueError("model M1 needs school_reference (the baseline school)")
        if self.tie not in ("low", "high"):
            raise ValueError("tie must be 'low' or 'high'")
        for name, stage in (
            ("trace", "map"),
            ("metadata", "map"),
            ("action_config", "map"),
            ("pattern_library", "label"),
        ):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise StageError(stage, FileNotFoundError(f"{name} file not found: {value}"))


# --- stages -----------------------------------------------------------------


def stage_map(
    trace: str | Path,
    metadata: str | Path,
    actions_out: Path,
    coverage_out: Path | None = None,
    action_config: str | Path | None = None,
    coalesce_ms: int = 0,
    level: str | None = None,
    trace_format: str | None = None,
) -> tuple[dict, dict]:
    """Returns (stage info, actions per unit)."""
    events = load_trace(trace, trace_format)
    meta = load_metadata(metadata)
    sessions = sessionize(events, meta)
    if level is not None:
        sessions = [s for s in sessions if s.metadata.education_level is EducationLevel(level)]
        if not sessions:
            raise ValueError(f"no sessions at level {level}")
    rules = load_action_config(action_config)
    actions, coverage = map_sessions(sessions, rules, coalesce_ms)
    write_actions(actions, actions_out)
    outputs = [Path(actions_out).name]
    if coverage_out is not None:
        write_json(coverage.to_dict(), coverage_out)
        outputs.append(Path(coverage_out).name)
    return {"outputs": outputs, "summary": coverage.summary()}, actions


def stage_label(
    actions: Path | Mapping,
    labelled_out: Path,
    coverage_out: Path | None = None,
    pattern_library: str | Path | None = None,
) -> tuple[dict, dict]:
    """``actions`` is an actions file or an already-loaded unit -> actions mapping."""
    library = load_pattern_library(pattern_library)
    units = actions if isinstance(actions, Mapping) else read_actions(actions)
    labelled = {u: label_actions(a, library) for u, a in units.items()}
    write_labelled(labelled, labelled_out)
    outputs = [Path(labelled_out).name]
    if coverage_out is None:
        return {"outputs": outputs, "n_patterns": len(library)}, labelled
    report = {
        "aggregate": label_coverage(la for rows in labelled.values() for la in rows).to_dict(),
        "sessions": {_unit_key(u): label_coverage(rows).to_dict() for u, rows in sorted(labelled.items())},
        "n_patterns": len(library),
    }
    write_json(report, coverage_out)
    outputs.append(Path(coverage_out).name)
    return {"outputs": outputs, "n_patterns": len(library)}, labelled


def assign_groups(
    units: list[UnitId], meta: Mapping[UnitId, SessionMetadata], groups: str, tie: str = "low"
) -> dict[UnitId, str]:
    """Group label per unit; performance is a median split of essay scores within each level."""
    if groups == "level":
        return {u: meta[u].education_level.value for u in units}
    out: dict[UnitId, str] = {}
    for level in EducationLevel:
        members = {u: meta[u].essay_score for u in units if meta[u].education_level is level}
        if members:
            out.update(median_split(members, tie))
    return out


def stage_ena(
    labelled: Path | Mapping,
    metadata: str | Path,
    out_dir: Path,
    window: int = 50,
    groups: str = "performance",
    tie: str = "low",
    drop_unlabelled: bool = False,
    n_dims: int = 2,
) -> dict:
    if not isinstance(labelled, Mapping):
        labelled = read_labelled(labelled)
    meta = load_metadata(metadata)
    units = sorted(labelled)
    assignment = assign_groups(units, meta, groups, tie)
    order = GROUP_ORDER[groups]
    lines = {u: labelled_to_lines(labelled[u], drop_unlabelled) for u in units}
    model = fit_ena(lines, assignment, order, window=window, n_report_dims=n_dims)
    space = model.space
    names = space.dimension_names
    report_dims = max(2, space.n_report_dims)

    with open(out_dir / "scores.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "server_id", "MR1", "SVD2", "group", "degenerate"])
        for i, u in enumerate(model.unit_ids):
            svd2 = space.scores[i, 1] if space.scores.shape[1] > 1 else 0.0
            writer.writerow([u[0], u[1], repr(float(space.scores[i, 0])), repr(float(svd2)), model.groups[i], int(model.data.degenerate[i])])

    labels = pair_labels()
    outputs = ["scores.csv"]
    for g in order:
        net = model.means[g]
        write_json(
            {"group": g, "member_count": net.member_count, "weights": dict(zip(labels, net.edge_weights))},
            out_dir / f"network_{g}.json",
        )
        outputs.append(f"network_{g}.json")
    # baseline-first subtraction: positive edges dominate the reference group
    a, b = order[1], order[0]
    sub = model.subtraction(a, b)
    write_json(
        {"group_a": a, "group_b": b, "weights": dict(zip(labels, sub.signed_weights))},
        out_dir / f"subtraction_{a}_{b}.json",
    )
    outputs.append(f"subtraction_{a}_{b}.json")

    group_means = {}
    for g in order:
        m = model.group_mean_scores(g)
        group_means[g] = [float(m[0]), float(m[1]) if len(m) > 1 else 0.0]
    write_json(
        {
            "codes": [c.value for c in CODES],
            "pairs": labels,
            "rotation": space.rotation,
            "rotation_groups": list(order),
            "dimension_names": names,
            "reported_dimensions": names[:report_dims],
            "basis": space.basis,
            "grand_mean": space.grand_mean,
            "variance_explained": space.variance_explained,
            "node_positions": space.node_positions,
            "goodness_of_fit": space.nodes.goodness_of_fit(),
            "centroid_convention": CENTROID_CONVENTION,
            "window": window,
            "drop_unlabelled": drop_unlabelled,
            "group_means": group_means,
            "n_units": len(units),
            "degenerate_units": [_unit_key(u) for u in model.degenerate_units],
        },
        out_dir / "space.json",
    )
    outputs.append("space.json")
    return {
        "outputs": outputs,
        "variance_explained_mr1": float(space.variance_explained[0]),
        "degenerate_units": len(model.degenerate_units),
    }


def read_scores(path: Path) -> dict[UnitId, dict]:
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            rows[(rec["user_id"], rec["server_id"])] = {
                "MR1": float(rec["MR1"]),
                "SVD2": float(rec["SVD2"]),
                "group": rec["group"],
                "degenerate": rec.get("degenerate", "0") == "1",
            }
    return rows


def compare(
    scores: Mapping[UnitId, float],
    meta: Mapping[UnitId, SessionMetadata],
    model: str,
    B: int = 1000,
    alpha: float = 0.05,
    seed: int = 42,
    tie: str = "low",
    school_reference: str | None = None,
) -> RegressionResult:
    """Regress MR1 scores on the model's factor and covariates, with bootstrap CIs and d."""
    units = sorted(scores)
    performance = assign_groups(units, meta, "performance", tie)
    design = build_design(model, scores, meta, performance, school_reference)
    result = ols_fit(design)
    boot = bootstrap_ci(design, B, alpha, seed)
    result.bootstrap_ci = boot.intervals
    result.bootstrap_redraws = boot.redraws
    factor = MODEL_FACTOR[model]
    result.interactions = interaction_scan(design, factor)
    in_a = design.columns[factor] == 1
    a, b = design.response[in_a], design.response[~in_a]
    result.cohens_d = cohens_d(a, b)
    result.cohens_d_ci = cohens_d_ci(a, b, B, alpha, seed)
    return result


def stage_compare(
    scores_path: Path,
    metadata: str | Path,
    out_dir: Path,
    model: str = "M1",
    B: int = 1000,
    alpha: float = 0.05,
    seed: int = 42,
    tie: str = "low",
    school_reference: str | None = None,
) -> dict:
    rows = read_scores(scores_path)
    meta = load_metadata(metadata)
    scores = {u: r["MR1"] for u, r in rows.items()}
    result = compare(scores, meta, model, B, alpha, seed, tie, school_reference)
    doc = result.to_dict()
    doc.update({"bootstrap": {"B": B, "alpha": alpha, "seed": seed, "generator": "PCG64 via SeedSequence([seed, replicate])", "quantile": "linear"}})
    name = f"regression_{model}.json"
    write_json(doc, out_dir / name)
    return {"outputs": [name]}


# --- report -----------------------------------------------------------------


def _result_from_json(doc: Mapping) -> RegressionResult:
    coefs = doc["coefficients"]
    names = list(coefs)

    def col(key):
        return {n: (math.nan if coefs[n][key] is None else coefs[n][key]) for n in names}

    return RegressionResult(
        names=names,
        coefficients=col("beta"),
        standard_errors=col("se"),
        t_values=col("t"),
        p_values=col("p"),
        r_squared=doc["r_squared"],
        f_value=doc["f_value"],
        f_p_value=doc["f_p_value"],
        n_obs=doc["n_obs"],
        df_resid=doc["df_resid"],
        residual_se=doc["residual_se"],
        model_id=doc.get("model"),
        cohens_d=doc.get("cohens_d"),
    )


def load_space(out_dir: Path) -> EnaSpace:
    doc = json.loads((out_dir / "space.json").read_text("utf-8"))
    rows = read_scores(out_dir / "scores.csv")
    units = sorted(rows)
    scores = np.array([[rows[u]["MR1"], rows[u]["SVD2"]] for u in units])
    basis = np.asarray(doc["basis"], dtype=float)
    positions = np.asarray(doc["node_positions"], dtype=float)
    gof = doc["goodness_of_fit"]
    return EnaSpace(
        basis=basis,
        grand_mean=np.asarray(doc["grand_mean"]),
        variance_explained=np.asarray(doc["variance_explained"]),
        scores=scores,
        fit_mask=np.array([not rows[u]["degenerate"] for u in units]),
        rotation=doc["rotation"],
        nodes=NodeFit(positions, [g["pearson"] for g in gof], [g["spearman"] for g in gof], len(units)),
        unit_ids=tuple(units),
        group_labels=tuple(doc["rotation_groups"]),
    )


def write_report(out_dir: str | Path) -> dict:
    """Render network diagrams and the regression table from a stage output directory."""
    out_dir = Path(out_dir)
    space = load_space(out_dir)
    doc = json.loads((out_dir / "space.json").read_text("utf-8"))
    means = {g: tuple(xy) for g, xy in doc["group_means"].items()}
    outputs = []
    for g in doc["rotation_groups"]:
        net_doc = json.loads((out_dir / f"network_{g}.json").read_text("utf-8"))
        net = MeanNetwork(g, np.array([net_doc["weights"][p] for p in doc["pairs"]]), net_doc["member_count"])
        render_network(space, net, group_means={g: means[g]}, path=out_dir / f"network_{g}.svg")
        outputs.append(f"network_{g}.svg")
    for path in sorted(out_dir.glob("subtraction_*.json")):
        sub_doc = json.loads(path.read_text("utf-8"))
        sub = SubtractionNetwork(
            sub_doc["group_a"], sub_doc["group_b"], np.array([sub_doc["weights"][p] for p in doc["pairs"]])
        )
        render_network(space, sub, group_means=means, path=path.with_suffix(".svg"))
        outputs.append(path.with_suffix(".svg").name)
    results = {}
    for path in sorted(out_dir.glob("regression_*.json")):
        res = _result_from_json(json.loads(path.read_text("utf-8")))
        results[res.model_id] = res
    if results:
        (out_dir / "table.txt").write_text(render_table(results), encoding="utf-8")
        outputs.append("table.txt")
    return {"outputs": outputs}


# --- orchestration ----------------------------------------------------------


def _versions() -> dict:
    try:
        pkg = importlib_metadata.version("artifact")
    except importlib_metadata.PackageNotFoundError:
        pkg = __version__
    return {"srlena": pkg, "python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(config: PipelineConfig) -> dict:
    """Run all four stages, render the report and write ``manifest.json``.

    Errors surface as :class:`StageError` tagged with the failing stage.
    """
    try:
        config.validate()
    except StageError:
        raise
    except Exception as exc:
        raise StageError("config", exc) from exc
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = []

    def run(name, fn, *args, **kwargs):
        try:
            info = fn(*args, **kwargs)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        data = None
        if isinstance(info, tuple):
            info, data = info
        stages.append({"name": name, **info})
        return data

    actions = run(
        "map",
        stage_map,
        config.trace,
        config.metadata,
        out / "actions.csv",
        out / "coverage_map.json",
        config.action_config,
        config.coalesce_ms,
        config.level,
        config.trace_format,
    )
    labelled = run("label", stage_label, actions, out / "labelled.csv", out / "coverage_label.json", config.pattern_library)
    run(
        "ena",
        stage_ena,
        labelled,
        config.metadata,
        out,
        config.window,
        config.groups,
        config.tie,
        config.drop_unlabelled,
        config.n_dims,
    )
    run(
        "compare",
        stage_compare,
        out / "scores.csv",
        config.metadata,
        out,
        config.model,
        config.bootstrap,
        config.alpha,
        config.seed,
        config.tie,
        config.school_reference,
    )
    try:
        report = write_report(out)
    except Exception as exc:
        raise StageError("report", exc) from exc

    files = sorted({f for s in stages for f in s["outputs"]} | set(report["outputs"]))
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "stages": stages,
        "report": report["outputs"],
        "config": asdict(config),
        "decisions": {
            "window": config.window,
            "tie": config.tie,
            "drop_unlabelled": config.drop_unlabelled,
            "coalesce_ms": config.coalesce_ms,
            "seed": config.seed,
            "bootstrap": config.bootstrap,
            "alpha": config.alpha,
            "groups": config.groups,
            "level": config.level,
            "school_reference": config.school_reference,
            "rotation_groups": list(GROUP_ORDER[config.groups]),
            "centroid_convention": CENTROID_CONVENTION,
            "pattern_matching": "contiguous, longest first, file order on ties",
            "accumulation": "binary per referent line, referent included in window",
        },
        "seeds": {"bootstrap": config.seed},
        "versions": _versions(),
        "files": {name: _sha256(out / name) for name in files},
    }
    write_json(manifest, out / "manifest.json")
    return manifest
