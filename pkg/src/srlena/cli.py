"""Command-line entry point: ``srlena <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from .errors import StageError
from . import pipeline


def _synth(args) -> dict:
    from .actions import load_action_config
    from .parser import load_pattern_library
    from .synthgen import generate_raw_trace, load_profile
    from .trace import write_metadata, write_trace

    profile = load_profile(args.profile)
    if args.allow_ambiguous:
        profile = type(profile)(
            profile.groups, profile.action_noise, profile.event_noise, profile.step_ms, allow_ambiguous=True
        )
    config = load_action_config(args.actions_config)
    library = load_pattern_library(args.patterns, config)
    trace = generate_raw_trace(profile, library, config, args.seed)
    write_trace(trace.events, args.out_trace)
    write_metadata(trace.metadata, args.out_metadata)
    if args.out_groups:
        pipeline.write_json({f"{u[0]}/{u[1]}": g for u, g in sorted(trace.groups.items())}, args.out_groups)
    return {"events": len(trace.events), "units": len(trace.metadata)}


def _map(args) -> dict:
    info, _ = pipeline.stage_map(
        args.trace,
        args.metadata,
        Path(args.out),
        Path(args.coverage_report) if args.coverage_report else None,
        args.actions_config,
        args.coalesce_ms,
        args.level,
        args.trace_format,
    )
    return info


def _label(args) -> dict:
    info, _ = pipeline.stage_label(
        Path(args.actions),
        Path(args.out),
        Path(args.coverage_report) if args.coverage_report else None,
        args.patterns,
    )
    return info


def _ena(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return pipeline.stage_ena(
        Path(args.labelled), args.metadata, out, args.window, args.groups, args.tie, args.drop_unlabelled
    )


def _compare(args) -> dict:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return pipeline.stage_compare(
        Path(args.scores),
        args.metadata,
        out,
        args.model,
        args.bootstrap,
        args.alpha,
        args.seed,
        args.tie,
        args.reference,
    )


def _report(args) -> dict:
    return pipeline.write_report(args.dir)


def _pipeline(args) -> dict:
    config = pipeline.PipelineConfig.from_file(args.config)
    if args.out_dir:
        config.out_dir = args.out_dir
    manifest = pipeline.run_pipeline(config)
    return {"out_dir": config.out_dir, "files": sorted(manifest["files"])}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srlena", description="Trace logs to SRL process networks and group tests.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic raw trace with planted group differences")
    p.add_argument("--profile", help="profile file (default: bundled profile)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-trace", required=True)
    p.add_argument("--out-metadata", required=True)
    p.add_argument("--out-groups", help="optional JSON file of planted group per unit")
    p.add_argument("--patterns")
    p.add_argument("--actions-config")
    p.add_argument("--allow-ambiguous", action="store_true")
    p.set_defaults(func=_synth, stage="synth")

    p = sub.add_parser("map", help="map raw events to actions")
    p.add_argument("--trace", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--actions-config")
    p.add_argument("--out", required=True)
    p.add_argument("--coverage-report")
    p.add_argument("--coalesce-ms", type=int, default=0)
    p.add_argument("--level", choices=["SE", "HE"])
    p.add_argument("--trace-format", choices=["delimited", "tree"])
    p.set_defaults(func=_map, stage="map")

    p = sub.add_parser("label", help="label actions with SRL processes")
    p.add_argument("--actions", required=True)
    p.add_argument("--patterns")
    p.add_argument("--out", required=True)
    p.add_argument("--coverage-report")
    p.set_defaults(func=_label, stage="label")

    p = sub.add_parser("ena", help="build the network space from labelled actions")
    p.add_argument("--labelled", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--groups", choices=sorted(pipeline.GROUP_ORDER), default="performance")
    p.add_argument("--drop-unlabelled", action="store_true")
    p.add_argument("--tie", choices=["low", "high"], default="low")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_ena, stage="ena")

    p = sub.add_parser("compare", help="regress MR1 scores on group and covariates")
    p.add_argument("--scores", required=True)
    p.add_argument("--metadata", required=True)
    p.add_argument("--model", choices=["M1", "M2", "M3"], default="M1")
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--tie", choices=["low", "high"], default="low")
    p.add_argument("--reference", help="baseline school for school_1 (M1)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_compare, stage="compare")

    p = sub.add_parser("report", help="render SVG networks and the regression table")
    p.add_argument("--dir", required=True, help="directory holding ena/compare outputs")
    p.set_defaults(func=_report, stage="report")

    p = sub.add_parser("pipeline", help="run every stage from one config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override out_dir from the config")
    p.set_defaults(func=_pipeline, stage="pipeline")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            info = args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: [{args.stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(pipeline._clean(info), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
