"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import math
import random
import socket
import threading
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from conftest import make_cue
from vsat.cli import main
from vsat.evaluation import (
    edit_alignment,
    make_synthetic_corpus,
    stage_report,
    suber,
    f1_by_kind,
)
from vsat.image_issues import (
    SaliencyMap,
    overlap_score,
    place_subtitle,
    saliency_spectral_residual,
    uniform_map,
)
from vsat.issues import IssueKind
from vsat.lang_issues import detect_non_word, detect_time_sync, split_cue
from vsat.media_ingest import Frame
from vsat.model_backends import EventScore, TranscriptWord
from vsat.pipeline import RunReport
from vsat.subtitle_core import (
    Region,
    SubtitleDoc,
    SubtitleFormat,
    parse_srt,
    parse_vtt,
    serialize_srt,
    serialize_vtt,
)

DATA = Path(__file__).parent / "data" / "roundtrip"


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


def words_cue(i, start, end, words):
    return make_cue(i, start, end, [" ".join(words)])


class TestParserRoundTrip:
    def test_criterion_1_parser_round_trip(self):
        with criterion("parser round-trip (30 files, <1s)"):
            files = sorted(DATA.glob("*"))
            assert len(files) == 30
            t0 = time.monotonic()
            for path in files:
                text = path.read_text("utf-8")
                if path.suffix == ".srt":
                    doc = parse_srt(text)
                    assert parse_srt(serialize_srt(doc)) == doc, path.name
                else:
                    doc = parse_vtt(text)
                    assert parse_vtt(serialize_vtt(doc)) == doc, path.name
            elapsed = time.monotonic() - t0
            assert elapsed < 1.0, f"took {elapsed:.3f}s"


class TestSegmentationSuite:
    def test_criterion_2_segmentation_properties(self):
        with criterion("segmentation property suite (1000 cues + realignment fixture)"):
            rng = random.Random(2024)
            vocab = ["a", "be", "cat", "door", "eagle", "forest", "giraffe",
                     "hallways", "institute", "juxtaposed"]
            for _ in range(1000):
                words = [rng.choice(vocab) for _ in range(rng.randint(1, 60))]
                text = " ".join(words)[:300]
                text = text.rstrip()
                start = rng.randrange(0, 3_600_000)
                duration = rng.randint(2000, 30_000)
                cue = make_cue(1, start, start + duration, [text])
                parts = split_cue(cue)
                for p in parts:
                    assert all(len(line) <= 50 for line in p.lines)
                assert parts[0].start_ms == cue.start_ms
                assert parts[-1].end_ms == cue.end_ms
                for a, b in zip(parts, parts[1:]):
                    assert a.end_ms == b.start_ms
                    assert a.duration_ms > 0
                joined = " ".join(" ".join(p.lines) for p in parts)
                assert joined == " ".join(cue.lines)

            # Word-timestamp realignment against hand-set boundaries.
            text = ("the quick brown foxes jumped over the lazy world "
                    "again and again tonight")
            cue = make_cue(3, 10_000, 16_000, [text])
            words = [TranscriptWord("world", 1600, 1800, 0.9),
                     TranscriptWord("again", 1800, 2500, 0.9)]
            parts = split_cue(cue, words)
            assert len(parts) == 2
            assert parts[0].end_ms == 11_800  # cue start + hand-set 1800ms
            assert parts[1].start_ms == 11_800
            assert parts[1].end_ms == 16_000


class TestThresholdBoundaries:
    def test_criterion_3_threshold_boundaries(self):
        with criterion("threshold boundaries (0.7 / 0.3 / 128 / 0.006)"):
            # similarity exactly 0.7 passes: (1,1)x(4,3,5) -> 7/sqrt(100)
            cue = make_cue(1, 0, 1000, ["aa bb"])
            t = 0
            words = []
            for token, count in (("aa", 4), ("bb", 3), ("cc", 5)):
                for _ in range(count):
                    words.append(TranscriptWord(token, t, t + 9, 1.0))
                    t += 10
            assert detect_time_sync(cue, words, threshold=0.7) is None
            # similarity exactly 0.699 flags: u=[x], v realizes 699/1000
            cue2 = make_cue(1, 0, 1000, ["x"])
            v = [("x", 699), ("p", 715), ("q", 13), ("r", 2), ("s", 1)]
            t = 0
            words2 = []
            for token, count in v:
                for _ in range(count):
                    words2.append(TranscriptWord(token, t, t + 1, 1.0))
                    t += 2
            issue = detect_time_sync(cue2, words2, threshold=0.7)
            assert issue is not None
            assert issue.evidence["similarity"] == 0.699

            # event score 0.3 passes, 0.301 tags
            c = make_cue(1, 0, 1000, ["quiet"])
            assert detect_non_word(c, [EventScore("Music", 0.3)], threshold=0.3) is None
            tagged = detect_non_word(c, [EventScore("Music", 0.301)], threshold=0.3)
            assert tagged is not None

            # brightness 128 -> white, 128.01 -> black
            from vsat.image_issues import choose_font_color
            flat = np.full((10, 10, 3), 128, dtype=np.uint8)
            frame = Frame(cue_id=1, width=10, height=10, pixels=flat.tobytes())
            assert choose_font_color(frame, Region(0, 0, 1, 1)) == "white"
            bumped = flat.copy()
            bumped[0, 0, :] = 129  # mean 128.01 exactly
            frame2 = Frame(cue_id=1, width=10, height=10, pixels=bumped.tobytes())
            assert choose_font_color(frame2, Region(0, 0, 1, 1)) == "black"

            # overlap 0.006 passes, next representable flags
            values = np.zeros((64, 64))
            values[56, 32] = 0.006
            values[0, 0] = 1.0 - 0.006
            assert not place_subtitle(SaliencyMap(values=values), threshold=0.006).flagged
            bump = math.nextafter(0.006, 1.0)
            values2 = np.zeros((64, 64))
            values2[56, 32] = bump
            values2[0, 0] = 1.0 - bump
            assert place_subtitle(SaliencyMap(values=values2), threshold=0.006).flagged


def brute_force_distance(a, b):
    import functools

    @functools.lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        if a[i] == b[j]:
            return go(i + 1, j + 1)
        return 1 + min(go(i + 1, j + 1), go(i + 1, j), go(i, j + 1))

    return go(0, 0)


class TestMetricOracle:
    def test_criterion_4_metric_oracle(self):
        with criterion("metric oracle (500 pairs exact + identity on 100 docs)"):
            rng = random.Random(7)
            vocab = ["w1", "w2", "w3", "w4", "<eol>", "<eob>"]
            for _ in range(500):
                hyp = tuple(rng.choice(vocab) for _ in range(rng.randint(0, 12)))
                ref = tuple(rng.choice(vocab) for _ in range(rng.randint(0, 12)))
                counts, _, _ = edit_alignment(hyp, ref)
                assert sum(counts.values()) == brute_force_distance(hyp, ref)

            for _ in range(100):
                cues = []
                t = 0
                for i in range(rng.randint(1, 8)):
                    t += rng.randint(0, 800)
                    dur = rng.randint(300, 4000)
                    n = rng.randint(1, 7)
                    cues.append(words_cue(i + 1, t, t + dur,
                                          [rng.choice("abcdefgh") for _ in range(n)]))
                    t += dur
                doc = SubtitleDoc(format=SubtitleFormat.SRT, cues=tuple(cues))
                report = suber(doc, doc)
                assert report.score == 0.0 and report.total_edits == 0


class TestSyntheticEndToEnd:
    def test_criterion_5_synthetic_end_to_end(self, tmp_path):
        with criterion("synthetic end-to-end (7/7 detected, F1=1.0, fix improves, <30s)"):
            t0 = time.monotonic()
            corpus = make_synthetic_corpus(1, tmp_path / "corpus")
            out = tmp_path / "out"
            code = main(["check", "--subs", str(corpus.subs_path),
                         "--assets", str(corpus.assets_dir),
                         "--config", str(corpus.config_path), "--out", str(out)])
            assert code == 0
            report = RunReport.from_json(
                json.loads((out / "report.json").read_text("utf-8")))

            planted = {(t["cue_id"], t["kind"]) for t in corpus.truth if t["truth"]}
            found = {(i.cue_id, i.kind.value) for i in report.issues}
            assert found == planted, f"missed {planted - found}, extra {found - planted}"
            scores = f1_by_kind(corpus.truth, report.issues)
            assert set(scores) == {k.value for k in IssueKind}
            assert all(v == 1.0 for v in scores.values()), scores

            code = main(["fix", "--subs", str(corpus.subs_path),
                         "--report", str(out / "report.json"), "--out", str(out)])
            assert code == 0
            fixed = parse_srt((out / "input.fixed.srt").read_text("utf-8"))
            before = suber(corpus.faulted_doc, corpus.ref_doc).score
            after = suber(fixed, corpus.ref_doc).score
            assert after < before, (before, after)

            rows = stage_report(corpus.faulted_doc, corpus.ref_doc, report.issues)
            stage_scores = [r.score for _, r in rows]
            assert all(a >= b for a, b in zip(stage_scores, stage_scores[1:]))
            assert stage_scores[-1] < stage_scores[0]

            elapsed = time.monotonic() - t0
            assert elapsed < 30.0, f"took {elapsed:.1f}s"


class TestSaliencyProperties:
    def test_criterion_6_saliency_properties(self):
        with criterion("saliency properties (partition, block argmax, monotone)"):
            quarters = [Region(x, y, 0.5, 0.5) for x in (0, 0.5) for y in (0, 0.5)]
            total = sum(overlap_score(uniform_map(), r) for r in quarters)
            assert abs(total - 1.0) <= 1e-6

            block = np.zeros((64, 64, 3), dtype=np.uint8)
            block[16:24, 16:24, :] = 255
            frame = Frame(cue_id=1, width=64, height=64, pixels=block.tobytes())
            smap = saliency_spectral_residual(frame)
            r, c = np.unravel_index(np.argmax(smap.values), smap.values.shape)
            assert 16 <= r < 24 and 16 <= c < 24, (r, c)

            rng = np.random.RandomState(99)
            for _ in range(200):
                raw = rng.rand(64, 64)
                smap = SaliencyMap(values=raw / raw.sum())
                x, y = rng.rand() * 0.3, rng.rand() * 0.3
                w, h = 0.1 + rng.rand() * 0.3, 0.1 + rng.rand() * 0.3
                inner = Region(x + 0.05, y + 0.05, w, h)
                outer = Region(x, y, w + 0.1 + rng.rand() * 0.2, h + 0.1)
                assert overlap_score(smap, inner) <= overlap_score(smap, outer) + 1e-12


class TestReplayDeterminism:
    def test_criterion_7_replay_determinism(self, tmp_path):
        with criterion("replay determinism (reports + decision log)"):
            corpus = make_synthetic_corpus(1, tmp_path / "corpus")
            out = tmp_path / "out"
            args = ["check", "--subs", str(corpus.subs_path),
                    "--assets", str(corpus.assets_dir),
                    "--config", str(corpus.config_path), "--out", str(out)]
            main(args)
            first = RunReport.from_json(
                json.loads((out / "report.json").read_text())).canonical_json()
            main(args)
            second = RunReport.from_json(
                json.loads((out / "report.json").read_text())).canonical_json()
            assert first == second

            # Replaying a recorded decision log reproduces the export bytes.
            from fastapi.testclient import TestClient
            from vsat.review_service import create_app, replay

            app = create_app(projects_dir=tmp_path / "projects")
            client = TestClient(app)
            body = {"video_ref": "", "subtitle_name": "input.srt",
                    "subtitle_text": corpus.subs_path.read_text(),
                    "report": json.loads((out / "report.json").read_text()),
                    "assets_dir": str(corpus.assets_dir)}
            project_id = client.post("/api/v1/projects", json=body).json()["project_id"]
            items = client.get(f"/api/v1/projects/{project_id}/issues").json()["items"]
            rng = random.Random(4)
            for item in items:
                action = rng.choice(["accept", "reject", "accept"])
                client.post(
                    f"/api/v1/projects/{project_id}/issues/{item['issue_id']}/decision",
                    json={"action": action})
            exported = client.post(f"/api/v1/projects/{project_id}/export").json()

            store = app.state.store
            state = store.load(project_id)
            replayed_doc = replay(state)
            assert replayed_doc == state.doc
            from vsat.subtitle_core import serialize
            assert serialize(replayed_doc, SubtitleFormat.SRT) == exported["subtitle"]


def _free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


class TestServiceContract:
    def test_criterion_8_service_contract_live(self, tmp_path):
        with criterion("service contract (live instance, export == cmd_fix)"):
            import httpx
            import uvicorn

            from vsat.review_service import create_app

            corpus = make_synthetic_corpus(1, tmp_path / "corpus")
            out = tmp_path / "out"
            main(["check", "--subs", str(corpus.subs_path),
                  "--assets", str(corpus.assets_dir),
                  "--config", str(corpus.config_path), "--out", str(out)])
            report_obj = json.loads((out / "report.json").read_text())

            port = _free_port()
            app = create_app(projects_dir=tmp_path / "projects")
            server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port,
                                                   log_level="error"))
            thread = threading.Thread(target=server.run, daemon=True)
            thread.start()
            deadline = time.monotonic() + 10
            while not server.started:
                assert time.monotonic() < deadline, "server did not start"
                time.sleep(0.02)
            base = f"http://127.0.0.1:{port}"
            try:
                with httpx.Client(base_url=base, timeout=10) as http:
                    health = http.get("/healthz").json()
                    assert health["status"] == "ok"

                    body = {"video_ref": "", "subtitle_name": "input.srt",
                            "subtitle_text": corpus.subs_path.read_text(),
                            "report": report_obj,
                            "assets_dir": str(corpus.assets_dir)}
                    created = http.post("/api/v1/projects", json=body)
                    assert created.status_code == 201, created.text
                    pid = created.json()["project_id"]

                    issues = http.get(f"/api/v1/projects/{pid}/issues").json()
                    assert issues["total"] == 7
                    for item in issues["items"]:
                        resp = http.post(
                            f"/api/v1/projects/{pid}/issues/{item['issue_id']}/decision",
                            json={"action": "accept"})
                        assert resp.status_code == 200, resp.text

                    cues = http.get(f"/api/v1/projects/{pid}/cues").json()["cues"]
                    resp = http.post(f"/api/v1/projects/{pid}/cues/{cues[0]['id']}/edit",
                                     json={"lines": list(cues[0]["lines"])})
                    assert resp.status_code == 200

                    audio = http.get(
                        f"/api/v1/projects/{pid}/assets/{cues[0]['id']}/audio",
                        headers={"Range": "bytes=0-31"})
                    assert audio.status_code == 206

                    exported = http.post(f"/api/v1/projects/{pid}/export").json()
            finally:
                server.should_exit = True
                thread.join(timeout=5)

            from dataclasses import replace as dc_replace

            from vsat.config import load_config
            from vsat.pipeline import run_fix

            cfg = dc_replace(load_config(), subs=str(corpus.subs_path),
                             out=str(tmp_path / "fix-out"))
            report = RunReport.from_json(report_obj)
            output = run_fix(cfg, report, None)
            assert exported["subtitle"].encode() == output.fixed_path.read_bytes()
