import json

import pytest
from fastapi.testclient import TestClient

from vsat.cli import main
from vsat.evaluation import make_synthetic_corpus
from vsat.issues import IssueKind
from vsat.pipeline import RunReport, load_doc, run_check, run_fix
from vsat.config import load_config
from vsat.review_service import ProjectState, create_app, replay
from vsat.subtitle_core import SubtitleDoc, parse_srt, parse_vtt


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return make_synthetic_corpus(1, tmp_path_factory.mktemp("corpus") / "c")


@pytest.fixture(scope="module")
def report_and_doc(corpus, tmp_path_factory):
    from dataclasses import replace

    out = tmp_path_factory.mktemp("check-out")
    cfg = replace(load_config(corpus.config_path), subs=str(corpus.subs_path),
                  assets=str(corpus.assets_dir), out=str(out))
    return run_check(cfg)


@pytest.fixture
def client(tmp_path):
    app = create_app(projects_dir=tmp_path / "projects")
    return TestClient(app)


def create_body(corpus, report, name="input.srt"):
    return {
        "video_ref": "video.mp4",
        "subtitle_name": name,
        "subtitle_text": corpus.subs_path.read_text(),
        "report": report.to_json(),
        "assets_dir": str(corpus.assets_dir),
    }


@pytest.fixture
def project(client, corpus, report_and_doc):
    report, _ = report_and_doc
    resp = client.post("/api/v1/projects", json=create_body(corpus, report))
    assert resp.status_code == 201, resp.text
    return resp.json()["project_id"]


class TestHealth:
    def test_healthz(self, client):
        resp = client.get("/healthz")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"
        assert "version" in resp.json()


class TestCreate:
    def test_create_and_get(self, client, corpus, report_and_doc, project):
        resp = client.get(f"/api/v1/projects/{project}")
        assert resp.status_code == 200
        body = resp.json()
        assert body["cue_count"] == len(corpus.faulted_doc.cues)
        assert body["issue_count"] == 7
        assert body["status"] == "open"

    def test_duplicate_upload_same_id(self, client, corpus, report_and_doc, project):
        report, _ = report_and_doc
        resp = client.post("/api/v1/projects", json=create_body(corpus, report))
        assert resp.status_code == 200
        assert resp.json()["project_id"] == project

    def test_report_mismatch_rejected(self, client, corpus, report_and_doc):
        report, _ = report_and_doc
        body = create_body(corpus, report)
        body["subtitle_text"] = "1\n00:00:01,000 --> 00:00:02,000\nonly one cue\n"
        resp = client.post("/api/v1/projects", json=body)
        assert resp.status_code == 422
        assert resp.json()["code"] == "report_mismatch"

    def test_unknown_project_404(self, client):
        resp = client.get("/api/v1/projects/nope")
        assert resp.status_code == 404
        assert resp.json()["code"] == "project_not_found"


class TestIssues:
    def test_list_all_stable_order(self, client, project):
        resp = client.get(f"/api/v1/projects/{project}/issues")
        items = resp.json()["items"]
        assert resp.json()["total"] == 7
        keys = [(i["cue_id"], i["kind"]) for i in items]
        assert keys == sorted(keys, key=lambda k: (k[0], k[1]))
        for item in items:
            assert item["cue"] is not None
            assert item["asset_urls"]["audio"].endswith("/audio")

    def test_filter_by_kind(self, client, project):
        resp = client.get(f"/api/v1/projects/{project}/issues",
                          params={"kind": "segmentation"})
        items = resp.json()["items"]
        assert len(items) == 1
        assert items[0]["kind"] == "segmentation"

    def test_unknown_kind_rejected(self, client, project):
        resp = client.get(f"/api/v1/projects/{project}/issues", params={"kind": "bogus"})
        assert resp.status_code == 422
        assert resp.json()["code"] == "invalid_kind"

    def test_filter_by_cue(self, client, project):
        all_items = client.get(f"/api/v1/projects/{project}/issues").json()["items"]
        cue_id = all_items[0]["cue_id"]
        resp = client.get(f"/api/v1/projects/{project}/issues", params={"cue": cue_id})
        assert all(i["cue_id"] == cue_id for i in resp.json()["items"])


class TestDecisions:
    def issue_of_kind(self, client, project, kind):
        items = client.get(f"/api/v1/projects/{project}/issues",
                           params={"kind": kind}).json()["items"]
        return items[0]

    def test_accept_segmentation_grows_doc(self, client, project):
        before = client.get(f"/api/v1/projects/{project}").json()["cue_count"]
        issue = self.issue_of_kind(client, project, "segmentation")
        resp = client.post(
            f"/api/v1/projects/{project}/issues/{issue['issue_id']}/decision",
            json={"action": "accept"})
        assert resp.status_code == 200
        after = client.get(f"/api/v1/projects/{project}").json()["cue_count"]
        assert after > before
        assert resp.json()["issue"]["decision"]["action"] == "accept"

    def test_reject_leaves_doc(self, client, project):
        issue = self.issue_of_kind(client, project, "harmful_word")
        before = client.get(f"/api/v1/projects/{project}/cues").json()
        resp = client.post(
            f"/api/v1/projects/{project}/issues/{issue['issue_id']}/decision",
            json={"action": "reject"})
        assert resp.status_code == 200
        after = client.get(f"/api/v1/projects/{project}/cues").json()
        assert before == after

    def test_accept_with_payload_rejected(self, client, project):
        issue = self.issue_of_kind(client, project, "harmful_word")
        resp = client.post(
            f"/api/v1/projects/{project}/issues/{issue['issue_id']}/decision",
            json={"action": "accept", "payload": {"lines": ["x"]}})
        assert resp.status_code == 422

    def test_edit_text_issue(self, client, project):
        issue = self.issue_of_kind(client, project, "time_sync")
        resp = client.post(
            f"/api/v1/projects/{project}/issues/{issue['issue_id']}/decision",
            json={"action": "edit", "payload": {"lines": ["my own wording"]}})
        assert resp.status_code == 200
        cue = resp.json()["issue"]["cue"]
        assert cue["lines"] == ["my own wording"]

    def test_edit_image_issue_with_text_payload_rejected(self, client, project):
        issue = self.issue_of_kind(client, project, "font_color")
        resp = client.post(
            f"/api/v1/projects/{project}/issues/{issue['issue_id']}/decision",
            json={"action": "edit", "payload": {"lines": ["nope"]}})
        assert resp.status_code == 422
        assert resp.json()["code"] == "invalid_payload"

    def test_edit_font_color_with_color_payload(self, client, project):
        issue = self.issue_of_kind(client, project, "font_color")
        resp = client.post(
            f"/api/v1/projects/{project}/issues/{issue['issue_id']}/decision",
            json={"action": "edit", "payload": {"color": "white"}})
        assert resp.status_code == 200

    def test_edit_segmentation_rejected(self, client, project):
        issue = self.issue_of_kind(client, project, "segmentation")
        resp = client.post(
            f"/api/v1/projects/{project}/issues/{issue['issue_id']}/decision",
            json={"action": "edit", "payload": {"lines": ["short"]}})
        assert resp.status_code == 422

    def test_overwrite_last_write_wins_audit_kept(self, client, project):
        issue = self.issue_of_kind(client, project, "non_word")
        url = f"/api/v1/projects/{project}/issues/{issue['issue_id']}/decision"
        client.post(url, json={"action": "reject"})
        resp = client.post(url, json={"action": "accept"})
        assert resp.json()["issue"]["decision"]["action"] == "accept"

    def test_unknown_issue_404(self, client, project):
        resp = client.post(f"/api/v1/projects/{project}/issues/nope/decision",
                           json={"action": "accept"})
        assert resp.status_code == 404


class TestManualEdit:
    def test_edit_no_issue_cue(self, client, project):
        cues = client.get(f"/api/v1/projects/{project}/cues").json()["cues"]
        target = cues[0]
        resp = client.post(f"/api/v1/projects/{project}/cues/{target['id']}/edit",
                           json={"lines": ["hello corrected"]})
        assert resp.status_code == 200
        assert resp.json()["cue"]["lines"] == ["hello corrected"]

    def test_sequential_edits_both_audited(self, client, project, tmp_path):
        cues = client.get(f"/api/v1/projects/{project}/cues").json()["cues"]
        cid = cues[1]["id"]
        url = f"/api/v1/projects/{project}/cues/{cid}/edit"
        client.post(url, json={"lines": ["first version"]})
        resp = client.post(url, json={"lines": ["second version"]})
        assert resp.json()["cue"]["lines"] == ["second version"]
        store = client.app.state.store
        state = store.load(project)
        edits = [e for e in state.obj["manual_edits"] if e["cue_id"] == cid]
        assert len(edits) == 2

    def test_empty_lines_rejected(self, client, project):
        resp = client.post(f"/api/v1/projects/{project}/cues/1/edit",
                           json={"lines": []})
        assert resp.status_code == 422

    def test_unknown_cue_404(self, client, project):
        resp = client.post(f"/api/v1/projects/{project}/cues/9999/edit",
                           json={"lines": ["x"]})
        assert resp.status_code == 404


class TestExport:
    def test_no_decisions_equals_normalized_original(self, client, corpus, project):
        resp = client.post(f"/api/v1/projects/{project}/export")
        assert resp.status_code == 200
        body = resp.json()
        assert body["format"] == "srt"
        assert body["subtitle"] == corpus.subs_path.read_text()
        assert "mux_command" in body

    def test_marks_exported_and_repeatable(self, client, project):
        client.post(f"/api/v1/projects/{project}/export")
        assert client.get(f"/api/v1/projects/{project}").json()["status"] == "exported"
        again = client.post(f"/api/v1/projects/{project}/export")
        assert again.status_code == 200

    def test_format_override_round_trips(self, client, corpus, project):
        resp = client.post(f"/api/v1/projects/{project}/export",
                           params={"format": "vtt"})
        doc = parse_vtt(resp.json()["subtitle"])
        original = parse_srt(corpus.subs_path.read_text())
        assert [(c.start_ms, c.end_ms, c.lines) for c in doc.cues] == \
               [(c.start_ms, c.end_ms, c.lines) for c in original.cues]

    def test_unknown_format_rejected(self, client, project):
        resp = client.post(f"/api/v1/projects/{project}/export",
                           params={"format": "ass"})
        assert resp.status_code == 422

    def test_accept_all_matches_cmd_fix_byte_for_byte(self, client, corpus,
                                                      report_and_doc, project, tmp_path):
        report, _ = report_and_doc
        items = client.get(f"/api/v1/projects/{project}/issues").json()["items"]
        for item in items:
            resp = client.post(
                f"/api/v1/projects/{project}/issues/{item['issue_id']}/decision",
                json={"action": "accept"})
            assert resp.status_code == 200, resp.text
        exported = client.post(f"/api/v1/projects/{project}/export").json()

        cfg = load_config(None, {"run.out": str(tmp_path / "fix-out")})
        from dataclasses import replace as dc_replace
        cfg = dc_replace(cfg, subs=str(corpus.subs_path))
        output = run_fix(cfg, report, None)
        assert exported["subtitle"].encode() == output.fixed_path.read_bytes()
        service_placement = {k: v for k, v in exported["placement"].items()}
        cli_placement = json.loads(output.placement_path.read_text())
        assert service_placement == cli_placement


class TestReplay:
    def test_replay_reproduces_working_doc(self, client, corpus, project):
        items = client.get(f"/api/v1/projects/{project}/issues").json()["items"]
        actions = ["accept", "reject", "accept", "edit", "accept", "accept", "accept"]
        for item, action in zip(items, actions):
            body = {"action": action}
            if action == "edit":
                if item["kind"] == "positioning":
                    body["payload"] = {"region": {"x": 0.2, "y": 0.05, "w": 0.6, "h": 0.1}}
                elif item["kind"] == "font_color":
                    body["payload"] = {"color": "black"}
                elif item["kind"] == "segmentation":
                    body = {"action": "accept"}
                else:
                    body["payload"] = {"lines": ["edited text"]}
            resp = client.post(
                f"/api/v1/projects/{project}/issues/{item['issue_id']}/decision",
                json=body)
            assert resp.status_code == 200, resp.text
        client.post(f"/api/v1/projects/{project}/cues/1/edit",
                    json={"lines": ["also manually touched"]})
        store = client.app.state.store
        state = store.load(project)
        assert replay(state) == state.doc

    def test_state_survives_reload(self, client, corpus, project):
        items = client.get(f"/api/v1/projects/{project}/issues").json()["items"]
        client.post(f"/api/v1/projects/{project}/issues/{items[0]['issue_id']}/decision",
                    json={"action": "accept"})
        store = client.app.state.store
        fresh = store.load(project)  # as a restarted process would
        assert fresh.decisions[items[0]["issue_id"]]["action"] == "accept"
        assert replay(fresh) == fresh.doc


class TestAssets:
    def test_audio_served_with_range(self, client, project):
        items = client.get(f"/api/v1/projects/{project}/issues").json()["items"]
        url = items[0]["asset_urls"]["audio"]
        full = client.get(url)
        assert full.status_code == 200
        assert full.headers["content-type"] == "audio/wav"
        part = client.get(url, headers={"Range": "bytes=0-99"})
        assert part.status_code == 206
        assert len(part.content) == 100
        assert part.headers["content-range"].startswith("bytes 0-99/")
        assert part.content == full.content[:100]

    def test_frame_served_as_png(self, client, project):
        items = client.get(f"/api/v1/projects/{project}/issues").json()["items"]
        url = items[0]["asset_urls"]["frame"]
        resp = client.get(url)
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_missing_asset_404(self, client, project):
        resp = client.get(f"/api/v1/projects/{project}/assets/9999/audio")
        assert resp.status_code == 404


class TestServeCommand:
    def test_serve_subprocess_sigint_state_survives(self, corpus, report_and_doc, tmp_path):
        import signal
        import socket
        import subprocess
        import sys
        import time as time_mod

        import httpx

        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        s.close()

        projects = tmp_path / "projects"
        proc = subprocess.Popen(
            [sys.executable, "-m", "vsat.cli", "serve", "--port", str(port),
             "--projects", str(projects), "--out", str(tmp_path / "out")],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE)
        base = f"http://127.0.0.1:{port}"
        try:
            deadline = time_mod.monotonic() + 15
            while True:
                try:
                    if httpx.get(f"{base}/healthz", timeout=1).status_code == 200:
                        break
                except httpx.HTTPError:
                    pass
                assert time_mod.monotonic() < deadline, "server never came up"
                assert proc.poll() is None, proc.stderr.read().decode()
                time_mod.sleep(0.05)

            report, _ = report_and_doc
            body = create_body(corpus, report)
            created = httpx.post(f"{base}/api/v1/projects", json=body, timeout=10)
            assert created.status_code == 201
            pid = created.json()["project_id"]
            items = httpx.get(f"{base}/api/v1/projects/{pid}/issues", timeout=10).json()
            httpx.post(
                f"{base}/api/v1/projects/{pid}/issues/{items['items'][0]['issue_id']}/decision",
                json={"action": "accept"}, timeout=10)
        finally:
            proc.send_signal(signal.SIGINT)
            proc.wait(timeout=10)

        # A restarted instance loads the same state file cleanly.
        from vsat.review_service import ProjectStore, replay
        store = ProjectStore(projects)
        state = store.load(pid)
        assert state.decisions
        assert replay(state) == state.doc
