"""Command line entry point: vsat check | fix | eval | serve.

Exit codes: 0 ok, 1 fatal error, 2 finished with per-cue skips.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .evaluation import f1_by_kind, stage_report, suber
from .pipeline import (
    FatalError,
    RunReport,
    dump_json,
    load_decisions,
    load_doc,
    run_check,
    run_fix,
    write_report,
)

log = logging.getLogger("vsat")

DETECTOR_FLAGS = ("spelling", "harmful", "timesync", "nonword", "segmentation",
                  "positioning", "fontcolor")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", help="output directory (default vsat-out)")


def _add_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--subs", help="subtitle file (.srt or .vtt)")
    p.add_argument("--video", help="raw video file for the external media tool")
    p.add_argument("--assets", help="pre-extracted asset directory (offline mode)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vsat",
        description="Subtitle quality checker: detect issues, apply reviewed "
                    "fixes, score results, and serve the review UI.")
    parser.add_argument("--version", action="version", version=f"vsat {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="detect issues and write report.json")
    _add_common(p_check)
    _add_inputs(p_check)
    p_check.add_argument("--detect", metavar="LIST",
                         help="comma list of detectors to enable, or 'all'/'none'")

    p_fix = sub.add_parser("fix", help="apply suggestions from a report")
    _add_common(p_fix)
    _add_inputs(p_fix)
    p_fix.add_argument("--report", required=True, help="report.json from 'vsat check'")
    p_fix.add_argument("--decisions",
                       help="JSON list of {issue_id, action, payload?}; "
                            "without it every suggestion is applied")

    p_eval = sub.add_parser("eval", help="score a subtitle file against a reference")
    _add_common(p_eval)
    p_eval.add_argument("--ref", required=True, help="reference subtitle file")
    p_eval.add_argument("--hyp", required=True, help="hypothesis subtitle file")
    p_eval.add_argument("--stages", action="store_true",
                        help="cumulative per-issue-kind stage scores (needs --report)")
    p_eval.add_argument("--report", help="report.json providing the fixes per stage")
    p_eval.add_argument("--truth", help="ground-truth labels JSON for per-kind F1")

    p_serve = sub.add_parser("serve", help="run the human review service")
    _add_common(p_serve)
    _add_inputs(p_serve)
    p_serve.add_argument("--port", type=int, help="HTTP port (default 8321)")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--projects", help="project state directory")
    return parser


def _overrides_from_args(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key] = value
    if getattr(args, "detect", None):
        wanted = args.detect.strip().lower()
        names = set() if wanted == "none" else (
            set(DETECTOR_FLAGS) if wanted == "all" else
            {p.strip() for p in wanted.split(",") if p.strip()})
        unknown = names - set(DETECTOR_FLAGS)
        if unknown:
            raise ConfigError(f"unknown detector(s): {sorted(unknown)}")
        for flag in DETECTOR_FLAGS:
            overrides[f"detect.{flag}"] = "true" if flag in names else "false"
    return overrides


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config, _overrides_from_args(args))
    updates = {}
    for name in ("subs", "video", "assets", "out", "port"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    if updates:
        from dataclasses import replace
        cfg = replace(cfg, **updates)
    return cfg


def cmd_check(args) -> int:
    cfg = _config_from_args(args)
    report, _ = run_check(cfg)
    path = write_report(report, cfg.out)
    print(f"{len(report.issues)} issue(s), {len(report.skips)} skip(s) -> {path}")
    return 2 if report.skips else 0


def cmd_fix(args) -> int:
    cfg = _config_from_args(args)
    try:
        report = RunReport.from_json(json.loads(Path(args.report).read_text("utf-8")))
    except (OSError, ValueError, KeyError) as e:
        raise FatalError(f"cannot load report: {e}") from e
    decisions = load_decisions(args.decisions) if args.decisions else None
    output = run_fix(cfg, report, decisions)
    print(f"wrote {output.fixed_path}")
    return 2 if output.result.conflicts else 0


def cmd_eval(args) -> int:
    cfg = _config_from_args(args)
    ref = load_doc(args.ref)
    hyp = load_doc(args.hyp)
    result: dict = {"suber": suber(hyp, ref).to_json()}
    if args.stages:
        if not args.report:
            raise FatalError("--stages needs --report for the fixes to stage")
        report = RunReport.from_json(json.loads(Path(args.report).read_text("utf-8")))
        rows = stage_report(hyp, ref, report.issues)
        result["stages"] = [{"stage": name, **rep.to_json()} for name, rep in rows]
    if args.truth:
        if not args.report:
            raise FatalError("--truth needs --report for the predictions")
        report = RunReport.from_json(json.loads(Path(args.report).read_text("utf-8")))
        truth = json.loads(Path(args.truth).read_text("utf-8"))
        result["f1"] = f1_by_kind(truth, report.issues)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_json(result, out_dir / "eval.json")
    print(json.dumps(result, sort_keys=True, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .review_service import create_app

    cfg = _config_from_args(args)
    projects_dir = args.projects or str(Path(cfg.out) / "projects")
    app = create_app(projects_dir=projects_dir)
    try:
        uvicorn.run(app, host=args.host, port=cfg.port, log_level="warning")
    except SystemExit as e:  # uvicorn raises on bind failure
        raise FatalError(f"server failed to start: {e}") from e
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"check": cmd_check, "fix": cmd_fix, "eval": cmd_eval, "serve": cmd_serve}
    try:
        return handlers[args.command](args)
    except (FatalError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
