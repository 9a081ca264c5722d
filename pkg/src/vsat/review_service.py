"""Human review service: browse cues and issues, preview evidence media,
accept/reject/edit suggestions, curate no-issue cues, export final files.

State is event-sourced: the working document is the fold of the audit log
(accepted/edited decisions and manual edits, in order) over the original
document, so replaying a project's log reproduces its exports exactly.
Each project lives in one JSON file written atomically; writers are
serialized per project, readers are lock-free.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from dataclasses import replace
from io import BytesIO
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import __version__
from .fixes import apply_all
from .issues import (
    Issue,
    IssueKind,
    MaskSpans,
    MoveRegion,
    ReplaceText,
    SetColor,
    SplitCue,
    Suggestion,
)
from .media_ingest import read_ppm
from .pipeline import RunReport
from .subtitle_core import Cue, Region, SubtitleDoc, SubtitleFormat, parse, serialize

EXPORT_CONTAINER = "mkv"


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, details: Optional[dict] = None):
        self.status = status
        self.code = code
        self.message = message
        self.details = details or {}
        super().__init__(message)


class ProjectState:
    """In-memory form of one project's JSON file."""

    def __init__(self, obj: dict):
        self.obj = obj

    # -- raw accessors -----------------------------------------------------
    @property
    def project_id(self) -> str:
        return self.obj["project_id"]

    @property
    def doc(self) -> SubtitleDoc:
        return SubtitleDoc.from_json(self.obj["doc"])

    @doc.setter
    def doc(self, value: SubtitleDoc) -> None:
        self.obj["doc"] = value.to_json()

    @property
    def original_doc(self) -> SubtitleDoc:
        return SubtitleDoc.from_json(self.obj["original_doc"])

    @property
    def issues(self) -> list[Issue]:
        return [Issue.from_json(i) for i in self.obj["issues"]]

    @issues.setter
    def issues(self, value: list[Issue]) -> None:
        self.obj["issues"] = [i.to_json() for i in value]

    def issue(self, issue_id: str) -> Issue:
        for i in self.issues:
            if i.issue_id == issue_id:
                return i
        raise ApiError(404, "issue_not_found", f"no issue {issue_id!r}")

    @property
    def decisions(self) -> dict:
        return self.obj["decisions"]

    @property
    def audit(self) -> list[dict]:
        return self.obj["audit"]

    @property
    def placements(self) -> dict:
        return self.obj["placements"]


def _now_ms() -> int:
    return int(time.time() * 1000)


def _content_hash(subtitle_text: str, report_obj: dict) -> str:
    canon = json.dumps(report_obj, sort_keys=True, ensure_ascii=False)
    h = hashlib.sha256()
    h.update(subtitle_text.encode("utf-8"))
    h.update(b"\x00")
    h.update(canon.encode("utf-8"))
    return h.hexdigest()[:16]


class ProjectStore:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def lock(self, project_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(project_id, threading.Lock())

    def path(self, project_id: str) -> Path:
        return self.root / f"{project_id}.json"

    def exists(self, project_id: str) -> bool:
        return self.path(project_id).is_file()

    def load(self, project_id: str) -> ProjectState:
        path = self.path(project_id)
        if not path.is_file():
            raise ApiError(404, "project_not_found", f"no project {project_id!r}")
        return ProjectState(json.loads(path.read_text("utf-8")))

    def save(self, state: ProjectState) -> None:
        path = self.path(state.project_id)
        data = json.dumps(state.obj, sort_keys=True, ensure_ascii=False, indent=1)
        fd, tmp = tempfile.mkstemp(dir=str(self.root), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                f.write(data)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)


# ---------------------------------------------------------------------------
# Mutation engine (shared by live requests and replay)

def _retarget_span(span: tuple[int, int], segment_texts: list[str]) -> Optional[tuple[int, tuple[int, int]]]:
    """Locate a pre-split char span inside one post-split segment.

    Split segments preserve every word, so offsets carry over 1:1 (line
    breaks count one char, like the joining spaces). Returns
    (segment index, local span) or None when the span crosses a boundary.
    """
    at = 0
    for k, text in enumerate(segment_texts):
        lo, hi = at, at + len(text)
        if span[0] >= lo and span[1] <= hi:
            return k, (span[0] - lo, span[1] - lo)
        at = hi + 1
    return None


def _remap_after_split(state: ProjectState, split_issue: Issue,
                       id_map: dict[int, list[int]]) -> None:
    """Shift cue ids of pending issues after a structural split."""
    updated: list[Issue] = []
    split_segments = None
    for issue in state.issues:
        if issue.issue_id == split_issue.issue_id:
            updated.append(issue)
            continue
        decided = issue.issue_id in state.decisions
        new_ids = id_map.get(issue.cue_id)
        if decided or not new_ids:
            updated.append(issue)
            continue
        if len(new_ids) == 1:
            updated.append(replace(issue, cue_id=new_ids[0]))
            continue
        # Pending issue on the split cue itself.
        if split_segments is None:
            split_segments = [" ".join(state.doc.cue_by_id(i).lines) for i in new_ids]
        if isinstance(issue.suggestion, MaskSpans):
            locals_ = [_retarget_span(s, split_segments) for s in issue.suggestion.spans]
            segments = {seg for hit in locals_ if hit for seg, _ in [hit]}
            if None not in locals_ and len(segments) == 1:
                seg = segments.pop()
                new_spans = tuple(local for _, local in locals_)
                evidence = dict(issue.evidence)
                evidence["spans"] = [list(s) for s in new_spans]
                updated.append(replace(issue, cue_id=new_ids[seg],
                                       evidence=evidence,
                                       suggestion=MaskSpans(spans=new_spans)))
                continue
        evidence = dict(issue.evidence)
        evidence["stale"] = "invalidated by an accepted split of this cue"
        updated.append(replace(issue, cue_id=new_ids[0], evidence=evidence))
    state.issues = updated


def _apply_suggestion_now(state: ProjectState, issue: Issue,
                          suggestion: Suggestion) -> None:
    doc = state.doc
    try:
        doc.cue_by_id(issue.cue_id)
    except KeyError:
        raise ApiError(409, "stale_issue",
                       f"issue {issue.issue_id} references a cue that no longer exists")
    effective = replace(issue, suggestion=suggestion)
    result = apply_all(doc, [effective])
    state.doc = result.doc
    for cue_id, placement in result.placements.items():
        entry = state.placements.setdefault(str(cue_id),
                                            {"region": None, "font_color": None})
        if placement.region is not None:
            entry["region"] = placement.region.to_json()
        if placement.font_color is not None:
            entry["font_color"] = placement.font_color
    if isinstance(suggestion, SplitCue):
        _remap_after_split(state, issue, result.id_map)


def _payload_to_suggestion(issue: Issue, payload: Optional[dict]) -> Suggestion:
    kind = issue.kind
    if payload is None:
        raise ApiError(422, "payload_required", "edit decisions need a payload")
    if kind in (IssueKind.CONTEXTUAL_SPELLING, IssueKind.HARMFUL_WORD,
                IssueKind.TIME_SYNC, IssueKind.NON_WORD):
        lines = payload.get("lines")
        if not lines or not all(isinstance(l, str) and l for l in lines):
            raise ApiError(422, "invalid_payload",
                           "text issues take {\"lines\": [non-empty strings]}")
        return ReplaceText(lines=tuple(lines))
    if kind is IssueKind.SEGMENTATION:
        raise ApiError(422, "invalid_payload",
                       "segmentation issues can only be accepted or rejected")
    if kind is IssueKind.POSITIONING:
        if "region" not in payload or "lines" in payload:
            raise ApiError(422, "invalid_payload",
                           "positioning issues take {\"region\": {x,y,w,h}} only")
        try:
            return MoveRegion(region=Region.from_json(payload["region"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ApiError(422, "invalid_payload", f"bad region: {e}")
    if kind is IssueKind.FONT_COLOR:
        if "color" not in payload or "lines" in payload:
            raise ApiError(422, "invalid_payload",
                           "font color issues take {\"color\": \"black\"|\"white\"} only")
        try:
            return SetColor(color=payload["color"])
        except ValueError as e:
            raise ApiError(422, "invalid_payload", str(e))
    raise ApiError(422, "invalid_payload", f"cannot edit issues of kind {kind.value}")


def _apply_event(state: ProjectState, event: dict) -> None:
    """Apply one audit event to the working doc (the replay unit)."""
    if event["type"] == "decision":
        issue = state.issue(event["issue_id"])
        if issue.evidence.get("stale"):
            raise ApiError(409, "stale_issue",
                           f"issue {issue.issue_id} was invalidated by a structural edit",
                           {"reason": issue.evidence["stale"]})
        action = event["action"]
        if action == "accept":
            if issue.suggestion is not None:
                _apply_suggestion_now(state, issue, issue.suggestion)
        elif action == "edit":
            _apply_suggestion_now(state, issue,
                                  _payload_to_suggestion(issue, event.get("payload")))
        elif action != "reject":
            raise ApiError(422, "invalid_action",
                           "action must be accept, reject, or edit")
        state.decisions[event["issue_id"]] = {
            "action": action, "payload": event.get("payload"),
            "decided_at": event["at"], "actor": event["actor"]}
    elif event["type"] == "manual_edit":
        doc = state.doc
        try:
            cue = doc.cue_by_id(event["cue_id"])
        except KeyError:
            raise ApiError(404, "cue_not_found", f"no cue {event['cue_id']}")
        lines = event["lines"]
        if not lines or not all(isinstance(l, str) and l.strip() for l in lines):
            raise ApiError(422, "invalid_lines", "lines must be non-empty strings")
        new_cue = replace(cue, lines=tuple(lines))
        state.doc = SubtitleDoc(
            format=doc.format, header=doc.header,
            cues=tuple(new_cue if c.id == cue.id else c for c in doc.cues))
    else:
        raise ApiError(422, "invalid_event", f"unknown event type {event['type']!r}")


def replay(state: ProjectState) -> SubtitleDoc:
    """Rebuild the working doc from the original doc and the audit log."""
    fresh = ProjectState(json.loads(json.dumps({
        **state.obj,
        "doc": state.obj["original_doc"],
        "issues": state.obj["original_issues"],
        "decisions": {},
        "placements": {},
    })))
    for event in state.audit:
        _apply_event(fresh, event)
    return fresh.doc


# ---------------------------------------------------------------------------
# Request/response bodies

class CreateProjectBody(BaseModel):
    video_ref: str = ""
    subtitle_name: str
    subtitle_text: str
    report: dict
    assets_dir: Optional[str] = None


class DecisionBody(BaseModel):
    action: str
    payload: Optional[dict] = None


class ManualEditBody(BaseModel):
    lines: list[str]


def _cue_view(cue: Cue) -> dict:
    return cue.to_json()


def _issue_view(state: ProjectState, issue: Issue) -> dict:
    view = issue.to_json()
    view["decision"] = state.decisions.get(issue.issue_id)
    try:
        view["cue"] = _cue_view(state.doc.cue_by_id(issue.cue_id))
    except KeyError:
        view["cue"] = None
    base = f"/api/v1/projects/{state.project_id}/assets/{issue.cue_id}"
    view["asset_urls"] = {"audio": f"{base}/audio", "frame": f"{base}/frame"}
    return view


def create_app(projects_dir: str | Path, static_dir: Optional[str | Path] = None) -> FastAPI:
    app = FastAPI(title="vsat review service", version=__version__)
    store = ProjectStore(projects_dir)

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={
            "code": exc.code, "message": exc.message, "details": exc.details})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/api/v1/projects", status_code=201)
    def create_project(body: CreateProjectBody, response: Response):
        try:
            report = RunReport.from_json(body.report)
        except (KeyError, ValueError) as e:
            raise ApiError(422, "invalid_report", f"report does not parse: {e}")
        try:
            fmt = SubtitleFormat(report.format)
            doc = parse(body.subtitle_text, fmt)
        except ValueError as e:
            raise ApiError(422, "invalid_subtitle", str(e))
        known = {c.id for c in doc.cues}
        for issue in report.issues:
            if issue.cue_id not in known:
                raise ApiError(422, "report_mismatch",
                               f"issue {issue.issue_id} references unknown cue {issue.cue_id}",
                               {"cue_id": issue.cue_id})
        project_id = _content_hash(body.subtitle_text, body.report)
        if store.exists(project_id):
            response.status_code = 200
            state = store.load(project_id)
        else:
            issues_json = [i.to_json() for i in report.issues]
            state = ProjectState({
                "project_id": project_id,
                "video_ref": body.video_ref,
                "subtitle_name": body.subtitle_name,
                "format": fmt.value,
                "original_doc": doc.to_json(),
                "doc": doc.to_json(),
                "original_issues": issues_json,
                "issues": issues_json,
                "decisions": {},
                "audit": [],
                "manual_edits": [],
                "placements": {},
                "assets_dir": body.assets_dir,
                "status": "open",
                "created_at": _now_ms(),
            })
            store.save(state)
        return {"project_id": project_id, "cue_count": len(doc.cues),
                "issue_count": len(report.issues), "status": state.obj["status"]}

    @app.get("/api/v1/projects/{project_id}")
    def get_project(project_id: str):
        state = store.load(project_id)
        return {
            "project_id": project_id,
            "status": state.obj["status"],
            "format": state.obj["format"],
            "video_ref": state.obj["video_ref"],
            "subtitle_name": state.obj["subtitle_name"],
            "cue_count": len(state.doc.cues),
            "issue_count": len(state.issues),
            "decided_count": len(state.decisions),
            "has_assets": bool(state.obj.get("assets_dir")),
        }

    @app.get("/api/v1/projects/{project_id}/cues")
    def get_cues(project_id: str):
        state = store.load(project_id)
        return {"cues": [_cue_view(c) for c in state.doc.cues]}

    @app.get("/api/v1/projects/{project_id}/issues")
    def get_issues(project_id: str, kind: Optional[str] = None,
                   cue: Optional[int] = None, offset: int = 0, limit: int = 200):
        state = store.load(project_id)
        issues = state.issues
        if kind is not None:
            try:
                want = IssueKind(kind)
            except ValueError:
                raise ApiError(422, "invalid_kind", f"unknown issue kind {kind!r}",
                               {"valid": [k.value for k in IssueKind]})
            issues = [i for i in issues if i.kind is want]
        if cue is not None:
            issues = [i for i in issues if i.cue_id == cue]
        page = issues[offset:offset + limit]
        return {"total": len(issues), "offset": offset,
                "items": [_issue_view(state, i) for i in page]}

    @app.post("/api/v1/projects/{project_id}/issues/{issue_id}/decision")
    def decide(project_id: str, issue_id: str, body: DecisionBody,
               x_actor: str = Header(default="anonymous")):
        if body.action not in ("accept", "reject", "edit"):
            raise ApiError(422, "invalid_action", "action must be accept, reject, or edit")
        if body.action in ("accept", "reject") and body.payload is not None:
            raise ApiError(422, "invalid_payload",
                           f"{body.action} decisions must not carry a payload")
        with store.lock(project_id):
            state = store.load(project_id)
            state.issue(issue_id)  # 404 before anything mutates
            event = {"type": "decision", "issue_id": issue_id, "action": body.action,
                     "payload": body.payload, "actor": x_actor, "at": _now_ms(),
                     "seq": len(state.audit)}
            _apply_event(state, event)
            state.audit.append(event)
            store.save(state)
            return {"issue": _issue_view(state, state.issue(issue_id))}

    @app.post("/api/v1/projects/{project_id}/cues/{cue_id}/edit")
    def manual_edit(project_id: str, cue_id: int, body: ManualEditBody,
                    x_actor: str = Header(default="anonymous")):
        with store.lock(project_id):
            state = store.load(project_id)
            try:
                before = state.doc.cue_by_id(cue_id)
            except KeyError:
                raise ApiError(404, "cue_not_found", f"no cue {cue_id}")
            event = {"type": "manual_edit", "cue_id": cue_id, "lines": body.lines,
                     "actor": x_actor, "at": _now_ms(), "seq": len(state.audit)}
            _apply_event(state, event)
            state.audit.append(event)
            state.obj["manual_edits"].append({
                "cue_id": cue_id, "old_lines": list(before.lines),
                "new_lines": list(body.lines), "at": event["at"], "actor": x_actor})
            store.save(state)
            return {"cue": _cue_view(state.doc.cue_by_id(cue_id))}

    @app.post("/api/v1/projects/{project_id}/export")
    def export(project_id: str, format: Optional[str] = None):
        with store.lock(project_id):
            state = store.load(project_id)
            fmt_value = format or state.obj["format"]
            try:
                fmt = SubtitleFormat(fmt_value)
            except ValueError:
                raise ApiError(422, "invalid_format", f"unknown format {fmt_value!r}",
                               {"valid": [f.value for f in SubtitleFormat]})
            doc = state.doc
            subtitle = serialize(doc, fmt)
            stem = Path(state.obj["subtitle_name"]).stem
            video = state.obj["video_ref"] or "$VIDEO"
            codec = "srt" if fmt is SubtitleFormat.SRT else "webvtt"
            mux = (f"ffmpeg -y -i {video} -i {stem}.fixed.{fmt.value} -map 0 -map 1 "
                   f"-c copy -c:s {codec} {stem}.subtitled.{EXPORT_CONTAINER}")
            state.obj["status"] = "exported"
            store.save(state)
            return {
                "filename": f"{stem}.fixed.{fmt.value}",
                "format": fmt.value,
                "subtitle": subtitle,
                "placement": {k: v for k, v in sorted(state.placements.items())},
                "mux_command": mux,
            }

    @app.get("/api/v1/projects/{project_id}/assets/{cue_id}/audio")
    def get_audio(project_id: str, cue_id: int, request: Request):
        state = store.load(project_id)
        data = _asset_bytes(state, cue_id, "audio.wav")
        return _maybe_range(request, data, "audio/wav")

    @app.get("/api/v1/projects/{project_id}/assets/{cue_id}/frame")
    def get_frame(project_id: str, cue_id: int):
        state = store.load(project_id)
        data = _asset_bytes(state, cue_id, "frame.ppm")
        frame = read_ppm(data, cue_id)
        from PIL import Image

        img = Image.frombytes("RGB", (frame.width, frame.height), frame.pixels)
        buf = BytesIO()
        img.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    def _asset_bytes(state: ProjectState, cue_id: int, name: str) -> bytes:
        assets_dir = state.obj.get("assets_dir")
        if not assets_dir:
            raise ApiError(404, "no_assets", "project has no asset directory")
        path = Path(assets_dir) / str(cue_id) / name
        if not path.is_file():
            raise ApiError(404, "asset_not_found", f"no {name} for cue {cue_id}")
        return path.read_bytes()

    def _maybe_range(request: Request, data: bytes, media_type: str) -> Response:
        header = request.headers.get("range")
        if not header or not header.startswith("bytes="):
            return Response(content=data, media_type=media_type,
                            headers={"Accept-Ranges": "bytes"})
        spec = header[len("bytes="):].split(",")[0].strip()
        start_s, _, end_s = spec.partition("-")
        try:
            start = int(start_s) if start_s else 0
            end = int(end_s) if end_s else len(data) - 1
        except ValueError:
            raise ApiError(416, "bad_range", f"cannot parse range {header!r}")
        end = min(end, len(data) - 1)
        if start > end or start >= len(data):
            raise ApiError(416, "bad_range", f"range {header!r} out of bounds")
        chunk = data[start:end + 1]
        return Response(content=chunk, status_code=206, media_type=media_type, headers={
            "Content-Range": f"bytes {start}-{end}/{len(data)}",
            "Accept-Ranges": "bytes"})

    if static_dir is None:
        bundled = Path(__file__).parent / "static"
        static_dir = bundled if bundled.is_dir() else None
    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    app.state.store = store
    return app
