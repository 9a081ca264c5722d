"""Orchestration: pre-process, detect in both modes, report, fix, export."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from . import __version__
from .config import ConfigError, RunConfig
from .fixes import ApplyResult, apply_all, select_accepted
from .image_issues import ImageOptions, run_image_pass
from .issues import Issue, Skip, sort_issues
from .lang_issues import LangOptions, run_language_pass
from .media_ingest import (
    AudioClip,
    ExternalToolSource,
    Frame,
    IngestError,
    OfflineAssetSource,
    render_command,
)
from .model_backends import (
    AssetAsr,
    AssetEvents,
    HttpAsr,
    HttpEvents,
    HttpLlm,
    LLM_API_KEY_ENV,
    LLM_BASE_URL_ENV,
    LLM_MODEL_ENV,
    MockLlm,
)
from .subtitle_core import (
    SubtitleDoc,
    SubtitleFormat,
    parse,
    serialize,
    table_csv,
    validate,
)

log = logging.getLogger(__name__)


class FatalError(Exception):
    """Unrecoverable problem: bad input file, bad config. Exit code 1."""


@dataclass
class RunReport:
    version: str
    config: dict
    subs: str
    format: str
    issues: list[Issue]
    skips: list[Skip]
    findings: list[dict]
    timings: dict[str, float]

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "subs": self.subs,
            "format": self.format,
            "issues": [i.to_json() for i in self.issues],
            "skips": [s.to_json() for s in self.skips],
            "findings": self.findings,
            "timings": self.timings,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RunReport":
        return cls(
            version=obj["version"],
            config=obj["config"],
            subs=obj["subs"],
            format=obj["format"],
            issues=[Issue.from_json(i) for i in obj["issues"]],
            skips=[Skip.from_json(s) for s in obj["skips"]],
            findings=obj.get("findings", []),
            timings=obj.get("timings", {}),
        )

    def canonical_json(self) -> str:
        """Deterministic serialization for comparisons; timings excluded."""
        obj = self.to_json()
        obj.pop("timings")
        return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
                    "utf-8")


def detect_format(path: str | Path) -> SubtitleFormat:
    suffix = Path(path).suffix.lower()
    if suffix == ".srt":
        return SubtitleFormat.SRT
    if suffix == ".vtt":
        return SubtitleFormat.VTT
    raise FatalError(f"cannot tell the subtitle format from {path!r} (need .srt or .vtt)")


def load_doc(path: str | Path) -> SubtitleDoc:
    fmt = detect_format(path)
    try:
        text = Path(path).read_text("utf-8")
    except OSError as e:
        raise FatalError(f"cannot read subtitle file: {e}") from e
    except UnicodeDecodeError as e:
        raise FatalError(f"subtitle file is not UTF-8: {e}") from e
    try:
        return parse(text, fmt)
    except ValueError as e:
        raise FatalError(f"{path}: {e}") from e


def build_media_source(cfg: RunConfig):
    """Offline assets win over an external tool; None if neither is set up."""
    if cfg.assets:
        try:
            return OfflineAssetSource(cfg.assets)
        except IngestError as e:
            raise FatalError(str(e)) from e
    if cfg.video and cfg.media_probe_cmd and cfg.media_audio_cmd and cfg.media_frame_cmd:
        try:
            return ExternalToolSource(cfg.video, Path(cfg.out) / "media-cache",
                                      probe_cmd=cfg.media_probe_cmd,
                                      audio_cmd=cfg.media_audio_cmd,
                                      frame_cmd=cfg.media_frame_cmd)
        except IngestError as e:
            raise FatalError(str(e)) from e
    return None


def build_llm(cfg: RunConfig):
    if cfg.backend_llm == "mock":
        if not cfg.backend_llm_table:
            return MockLlm({})
        try:
            return MockLlm.from_file(cfg.backend_llm_table)
        except (OSError, ValueError) as e:
            raise FatalError(f"cannot load mock LLM table: {e}") from e
    base_url = os.environ.get(LLM_BASE_URL_ENV)
    model = os.environ.get(LLM_MODEL_ENV)
    if not base_url or not model:
        raise FatalError(
            f"backend.llm=http needs {LLM_BASE_URL_ENV} and {LLM_MODEL_ENV} set")
    return HttpLlm(base_url, model=model, api_key=os.environ.get(LLM_API_KEY_ENV, ""),
                   timeout_s=cfg.backend_llm_timeout)


def build_asr(cfg: RunConfig):
    if cfg.backend_asr == "http":
        if not cfg.backend_asr_url:
            raise FatalError("backend.asr=http needs backend.asr_url")
        return HttpAsr(cfg.backend_asr_url)
    return AssetAsr(cfg.assets or ".")


def build_events(cfg: RunConfig):
    if cfg.backend_events == "http":
        if not cfg.backend_events_url:
            raise FatalError("backend.events=http needs backend.events_url")
        return HttpEvents(cfg.backend_events_url)
    return AssetEvents(cfg.assets or ".")


def run_check(cfg: RunConfig) -> tuple[RunReport, SubtitleDoc]:
    if not cfg.subs:
        raise FatalError("no subtitle file given (--subs)")
    timings: dict[str, float] = {}
    t0 = time.monotonic()
    doc = load_doc(cfg.subs)
    fmt = doc.format

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_dir.joinpath("table.csv").write_text(table_csv(doc), "utf-8")
    timings["preprocess_s"] = round(time.monotonic() - t0, 6)

    source = build_media_source(cfg)
    info = None
    if source is not None:
        try:
            info = source.probe()
        except IngestError as e:
            raise FatalError(f"media probe failed: {e}") from e
    findings = validate(doc, info.duration_ms if info else None)

    t0 = time.monotonic()
    skips: list[Skip] = []
    clips: dict[int, AudioClip] = {}
    frames: dict[int, Frame] = {}
    need_audio = cfg.detect_timesync or cfg.detect_nonword or cfg.detect_segmentation
    need_frames = cfg.detect_positioning or cfg.detect_fontcolor
    if source is not None:
        for cue in doc.cues:
            if need_audio:
                try:
                    clips[cue.id] = source.audio_clip(cue.id, cue.start_ms, cue.end_ms)
                except IngestError as e:
                    skips.append(Skip(cue.id, "audio_extract", str(e)))
            if need_frames:
                try:
                    frames[cue.id] = source.first_frame(cue.id, cue.start_ms)
                except IngestError as e:
                    skips.append(Skip(cue.id, "frame_extract", str(e)))
    timings["extract_s"] = round(time.monotonic() - t0, 6)

    t0 = time.monotonic()
    issues: list[Issue] = []
    lang_enabled = (cfg.detect_spelling or cfg.detect_harmful or cfg.detect_timesync
                    or cfg.detect_nonword or cfg.detect_segmentation)
    if lang_enabled:
        options = LangOptions(
            spelling=cfg.detect_spelling, harmful=cfg.detect_harmful,
            timesync=cfg.detect_timesync, nonword=cfg.detect_nonword,
            segmentation=cfg.detect_segmentation,
            similarity_threshold=cfg.threshold_timesync,
            event_threshold=cfg.threshold_event, max_cpl=cfg.threshold_cpl,
            context_window=cfg.context_window, parallelism=cfg.parallelism)
        lang_issues, lang_skips = run_language_pass(
            doc, build_llm(cfg), build_asr(cfg), build_events(cfg), clips, options)
        issues.extend(lang_issues)
        skips.extend(lang_skips)
    timings["language_s"] = round(time.monotonic() - t0, 6)

    t0 = time.monotonic()
    if cfg.detect_positioning or cfg.detect_fontcolor:
        image_options = ImageOptions(
            positioning=cfg.detect_positioning, font_color=cfg.detect_fontcolor,
            overlap_threshold=cfg.threshold_overlap,
            brightness_threshold=cfg.threshold_brightness,
            default_region=cfg.default_region, current_font_color=cfg.font_color)
        image_issues, image_skips = run_image_pass(doc, frames, image_options)
        issues.extend(image_issues)
        skips.extend(image_skips)
    timings["image_s"] = round(time.monotonic() - t0, 6)

    report = RunReport(
        version=__version__,
        config=cfg.to_json(),
        subs=str(cfg.subs),
        format=fmt.value,
        issues=sort_issues(issues),
        skips=sorted(skips, key=lambda s: (s.cue_id, s.detector, s.reason)),
        findings=[{"code": f.code, "cue_id": f.cue_id, "message": f.message}
                  for f in findings],
        timings=timings,
    )
    return report, doc


def write_report(report: RunReport, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    obj = report.to_json()
    text = json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    path.write_text(text, "utf-8")
    return path


@dataclass
class FixOutput:
    result: ApplyResult
    fixed_path: Path
    placement_path: Path
    mux_path: Path


def run_fix(cfg: RunConfig, report: RunReport,
            decisions: Optional[dict] = None) -> FixOutput:
    doc = load_doc(report.subs if cfg.subs is None else cfg.subs)
    known = {c.id for c in doc.cues}
    for issue in report.issues:
        if issue.cue_id not in known:
            raise FatalError(f"report issue {issue.issue_id} references unknown cue "
                             f"{issue.cue_id}; wrong subtitle file?")
    selected = select_accepted(report.issues, decisions)
    result = apply_all(doc, selected)
    for conflict in result.conflicts:
        log.warning("fix conflict: %s", conflict)

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = doc.format
    stem = Path(report.subs).stem
    fixed_path = out_dir / f"{stem}.fixed.{fmt.value}"
    fixed_path.write_text(serialize(result.doc, fmt), "utf-8")

    placement_path = out_dir / "placement.json"
    dump_json({str(cue_id): p.to_json() for cue_id, p in sorted(result.placements.items())},
              placement_path)

    codec = "srt" if fmt is SubtitleFormat.SRT else "webvtt"
    container = "mkv"
    mux_argv = render_command(cfg.media_mux_cmd, {
        "video": cfg.video or "$VIDEO",
        "subs": str(fixed_path),
        "codec": codec,
        "out": str(out_dir / f"{stem}.subtitled.{container}"),
    })
    mux_path = out_dir / "mux.sh"
    mux_path.write_text("#!/bin/sh\n# Attach the corrected subtitle track with an "
                        "external media processor.\n"
                        + " ".join(mux_argv) + "\n", "utf-8")
    mux_path.chmod(0o755)
    return FixOutput(result=result, fixed_path=fixed_path,
                     placement_path=placement_path, mux_path=mux_path)


def load_decisions(path: str | Path) -> dict:
    """Decisions file: JSON list of {issue_id, action, payload?}."""
    try:
        entries = json.loads(Path(path).read_text("utf-8"))
    except (OSError, ValueError) as e:
        raise FatalError(f"cannot read decisions file: {e}") from e
    if not isinstance(entries, list):
        raise FatalError("decisions file must be a JSON list")
    return {e["issue_id"]: e for e in entries}
