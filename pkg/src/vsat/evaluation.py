"""Quality scoring: a subtitle edit-rate metric over word/break token
streams, detection F1, cumulative stage reports, and a deterministic
synthetic corpus generator used by the acceptance suite.

The edit rate pairs cues by time overlap, runs a token-level edit
distance per pair (words plus line/block break tokens), then collapses a
word deleted in one pair and inserted in an adjacent pair into a single
"shift" edit.  Score = 100 x edits / reference token count; identical
documents score 0.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .fixes import apply_all
from .issues import Issue, IssueKind, LANGUAGE_KINDS
from .lang_issues import (
    build_harm_request,
    build_spell_detect_request,
    build_spell_fix_request,
    normalize_tokens,
)
from .media_ingest import Frame, silence_clip, write_ppm, write_wav
from .model_backends import prompt_key
from .subtitle_core import Cue, SubtitleDoc, SubtitleFormat, serialize_srt

# Break tokens; normalized words never contain "<", so these cannot collide.
EOL = "<eol>"
EOB = "<eob>"

MetricToken = str


def tokenize_cue(cue: Cue) -> list[MetricToken]:
    tokens: list[MetricToken] = []
    for i, line in enumerate(cue.lines):
        if i:
            tokens.append(EOL)
        tokens.extend(normalize_tokens(line))
    tokens.append(EOB)
    return tokens


def tokenize_doc(doc: SubtitleDoc) -> list[MetricToken]:
    tokens: list[MetricToken] = []
    for cue in doc.cues:
        tokens.extend(tokenize_cue(cue))
    return tokens


@dataclass(frozen=True)
class SuberReport:
    score: float
    edits: dict[str, int]  # substitution / insertion / deletion / shift
    ref_tokens: int

    @property
    def total_edits(self) -> int:
        return sum(self.edits.values())

    def to_json(self) -> dict:
        return {"score": self.score, "edits": dict(self.edits),
                "ref_tokens": self.ref_tokens}


def pair_cues(hyp_cues: Sequence[Cue], ref_cues: Sequence[Cue]) -> list[tuple[int, int]]:
    """Greedy time-overlap pairing, monotone in start order.

    Each hyp cue takes the not-yet-passed ref cue with maximal overlap
    (> 0 required); equal overlap keeps the earlier ref cue.
    """
    pairs: list[tuple[int, int]] = []
    next_ref = 0
    for hi, h in enumerate(hyp_cues):
        best = None
        best_overlap = 0
        for ri in range(next_ref, len(ref_cues)):
            r = ref_cues[ri]
            if r.start_ms >= h.end_ms:
                break
            overlap = min(h.end_ms, r.end_ms) - max(h.start_ms, r.start_ms)
            if overlap > best_overlap:
                best, best_overlap = ri, overlap
        if best is not None:
            pairs.append((hi, best))
            next_ref = best + 1
    return pairs


def edit_alignment(hyp: Sequence[MetricToken], ref: Sequence[MetricToken]):
    """Token Levenshtein with backtrace.

    Returns (counts, deleted_words, inserted_words): "deletion" is a ref
    token missing from hyp, "insertion" a hyp token absent from ref.
    Break tokens are counted but excluded from the word multisets.
    """
    n, m = len(hyp), len(ref)
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        hi = hyp[i - 1]
        row = dist[i]
        prev = dist[i - 1]
        for j in range(1, m + 1):
            if hi == ref[j - 1]:
                row[j] = prev[j - 1]
            else:
                row[j] = 1 + min(prev[j - 1], prev[j], row[j - 1])
    counts = Counter()
    deleted: Counter = Counter()
    inserted: Counter = Counter()
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and hyp[i - 1] == ref[j - 1] and dist[i][j] == dist[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + 1:
            counts["substitution"] += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i][j] == dist[i][j - 1] + 1:
            counts["deletion"] += 1
            if ref[j - 1] not in (EOL, EOB):
                deleted[ref[j - 1]] += 1
            j -= 1
        else:
            counts["insertion"] += 1
            if hyp[i - 1] not in (EOL, EOB):
                inserted[hyp[i - 1]] += 1
            i -= 1
    return counts, deleted, inserted


def _collapse_shifts(per_pair: list[tuple[Counter, Counter, Counter]]) -> Counter:
    """Merge per-pair edit counts, collapsing cross-pair moves into shifts.

    A word deleted in one pair and inserted in the adjacent pair is one
    shift (two edits become one).
    """
    totals = Counter()
    for counts, _, _ in per_pair:
        totals.update(counts)
    shifts = 0
    for k in range(len(per_pair) - 1):
        for src, dst in ((k, k + 1), (k + 1, k)):
            deleted = per_pair[src][1]
            inserted = per_pair[dst][2]
            common = deleted & inserted
            for token, count in common.items():
                shifts += count
                deleted[token] -= count
                inserted[token] -= count
                totals["deletion"] -= count
                totals["insertion"] -= count
    totals["shift"] = shifts
    return totals


def suber(hyp: SubtitleDoc, ref: SubtitleDoc, enable_shifts: bool = True) -> SuberReport:
    ref_token_count = len(tokenize_doc(ref))
    if ref_token_count == 0:
        raise ValueError("reference document has no cues; the score is undefined")

    pairs = pair_cues(hyp.cues, ref.cues)
    paired_hyp = {hi for hi, _ in pairs}
    paired_ref = {ri for _, ri in pairs}

    per_pair = []
    for hi, ri in pairs:
        counts, deleted, inserted = edit_alignment(
            tokenize_cue(hyp.cues[hi]), tokenize_cue(ref.cues[ri]))
        per_pair.append((counts, deleted, inserted))
    if enable_shifts:
        totals = _collapse_shifts(per_pair)
    else:
        totals = Counter()
        for counts, _, _ in per_pair:
            totals.update(counts)
        totals["shift"] = 0

    for ri, cue in enumerate(ref.cues):
        if ri not in paired_ref:
            totals["deletion"] += len(tokenize_cue(cue))
    for hi, cue in enumerate(hyp.cues):
        if hi not in paired_hyp:
            totals["insertion"] += len(tokenize_cue(cue))

    edits = {k: int(totals.get(k, 0)) for k in ("substitution", "insertion", "deletion", "shift")}
    total = sum(edits.values())
    return SuberReport(score=100.0 * total / ref_token_count, edits=edits,
                       ref_tokens=ref_token_count)


@dataclass(frozen=True)
class DetectionLabel:
    cue_id: int
    kind: IssueKind
    truth: bool
    predicted: bool


def f1(labels: Sequence[DetectionLabel]) -> float:
    tp = sum(1 for l in labels if l.truth and l.predicted)
    fp = sum(1 for l in labels if not l.truth and l.predicted)
    fn = sum(1 for l in labels if l.truth and not l.predicted)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def f1_by_kind(truth: Sequence[dict], issues: Sequence[Issue]) -> dict[str, float]:
    """Per-kind F1 from a ground-truth label list and a detection run."""
    predicted = {(i.cue_id, i.kind) for i in issues}
    labels_by_kind: dict[IssueKind, list[DetectionLabel]] = {}
    for entry in truth:
        kind = IssueKind(entry["kind"])
        label = DetectionLabel(cue_id=entry["cue_id"], kind=kind,
                               truth=bool(entry["truth"]),
                               predicted=(entry["cue_id"], kind) in predicted)
        labels_by_kind.setdefault(kind, []).append(label)
    return {kind.value: f1(labels) for kind, labels in sorted(
        labels_by_kind.items(), key=lambda kv: kv[0].order)}


def stage_report(base: SubtitleDoc, ref: SubtitleDoc, issues: Sequence[Issue],
                 stages: Sequence[IssueKind] = LANGUAGE_KINDS) -> list[tuple[str, SuberReport]]:
    """Cumulative per-stage scores: apply each kind's fixes in order, re-score.

    Structural (split) stages belong at the end of ``stages``: earlier
    stages must not renumber cues that later issues reference.  The default
    order does this.
    """
    rows = [("input", suber(base, ref))]
    doc = base
    for kind in stages:
        kind_issues = [i for i in issues if i.kind == kind]
        if kind_issues:
            doc = apply_all(doc, kind_issues).doc
        rows.append((f"+{kind.value}", suber(doc, ref)))
    return rows


# ---------------------------------------------------------------------------
# Synthetic corpus
#
# A deterministic stand-in for real footage: a clean reference document,
# a faulted copy with one planted defect per requested kind, matching
# offline assets (silence WAVs, PPM frames, transcripts, event scores),
# a mock-LLM response table, and ground-truth labels.

FILLER_TEXTS = (
    "Welcome back to the kitchen, everyone.",
    "Today we are baking a small lemon cake.",
    "Zest the lemon before you juice it.",
    "Keep the butter cold until the last moment.",
    "A pinch of salt keeps the flavors honest.",
    "Let the mixture rest while the oven warms.",
    "Scrape the bowl so nothing is wasted.",
    "The batter should fall slowly from the spoon.",
)

SPELLING_PLANTS = (
    ("dessert", "desert", "The {word} needs another minute to set.",
     "a cooking video is about food, not landscapes"),
    ("flour", "flower", "Sift the {word} gently into the bowl.",
     "baking uses milled grain, not blossoms"),
    ("bread", "bred", "Slice the {word} while it is still warm.",
     "the cue is about baked goods"),
)

HARM_PLANTS = ("idiot", "jackass", "moron")

SYNC_PLANTS = (
    ("Fold the berries into the cream.", "Preheat your oven, remember?"),
    ("Whisk until soft peaks form.", "Grease and line both baking tins."),
)

SEGMENTATION_PLANTS = (
    ("Roll the dough into a thin even sheet on the board",
     "then brush it with butter and a little brown sugar",
     "before the first fold"),
    ("Press the crumbs into the tin with a small spoon",
     "so the base is packed down tight from edge to edge",
     "and chill it well"),
)

POSITIONING_TEXTS = ("The glaze sets quickly under the cool light.",
                     "Watch the caption area while the card is up.")
FONTCOLOR_TEXTS = ("The frosting scene is very bright down here.",
                   "Snow-white fondant fills the lower half now.")

FRAME_W, FRAME_H = 320, 180
SPEECH_EVENTS = [{"label": "Speech", "score": 0.9}, {"label": "Music", "score": 0.02}]
MUSIC_EVENTS = [{"label": "Music", "score": 0.71}, {"label": "Speech", "score": 0.1}]


def _checker(img: np.ndarray, y0: int, y1: int, x0: int, x1: int,
             lo: int = 40, hi: int = 250, cell: int = 5) -> None:
    yy, xx = np.mgrid[0:y1 - y0, 0:x1 - x0]
    img[y0:y1, x0:x1] = np.where(((yy // cell) + (xx // cell)) % 2 == 0, hi, lo)


def corpus_frame(kind: str, cue_id: int) -> Frame:
    """clean: texture at top; poisoned: texture in the caption band;
    bright: texture at top plus a white lower half."""
    img = np.full((FRAME_H, FRAME_W), 128.0)
    if kind == "clean":
        _checker(img, 10, 50, 0, FRAME_W)
    elif kind == "poisoned":
        _checker(img, 153, 171, 64, 256)
    elif kind == "bright":
        _checker(img, 10, 50, 0, FRAME_W)
        img[100:, :] = 255.0
    else:
        raise ValueError(f"unknown frame kind {kind!r}")
    rgb = np.repeat(img[:, :, None], 3, axis=2).astype(np.uint8)
    return Frame(cue_id=cue_id, width=FRAME_W, height=FRAME_H, pixels=rgb.tobytes())


@dataclass
class _Slot:
    """One faulted cue with its assets, next to its reference counterpart(s)."""

    ref_texts: list[tuple[str, ...]]       # one or more ref cues (split case)
    faulted_text: tuple[str, ...]
    spoken: Optional[str] = None           # None: derive from ref text
    events: list = None
    frame: str = "clean"
    spell: Optional[dict] = None           # {"word","rationale","candidates"}
    harm_word: Optional[str] = None
    truth: dict = None                     # kind.value -> bool
    merged: bool = False                   # ref_texts tile the faulted interval

    def __post_init__(self):
        self.events = self.events if self.events is not None else list(SPEECH_EVENTS)
        self.truth = self.truth or {}


def _spoken_text(slot: _Slot) -> str:
    if slot.spoken is not None:
        return slot.spoken
    words = []
    for lines in slot.ref_texts:
        for line in lines:
            for token in line.split():
                if token.startswith("[") and token.endswith("]"):
                    continue
                if not normalize_tokens(token):
                    continue
                words.append(token)
    return " ".join(words)


def _duration_for(text: str) -> int:
    return max(1600, 60 * len(text))


@dataclass
class CorpusBundle:
    out_dir: Path
    ref_doc: SubtitleDoc
    faulted_doc: SubtitleDoc
    truth: list[dict]
    ref_path: Path
    subs_path: Path
    truth_path: Path
    assets_dir: Path
    mock_llm_path: Path
    config_path: Path


def make_synthetic_corpus(seed: int, out_dir: str | Path,
                          faults: Optional[Mapping[IssueKind, int]] = None) -> CorpusBundle:
    """Deterministic corpus with per-kind planted fault counts (default 1 each)."""
    if faults is None:
        faults = {kind: 1 for kind in IssueKind}
    rng = random.Random(seed)
    out = Path(out_dir)
    assets = out / "assets"
    assets.mkdir(parents=True, exist_ok=True)

    slots: list[_Slot] = []

    def filler() -> _Slot:
        text = (FILLER_TEXTS[rng.randrange(len(FILLER_TEXTS))],)
        return _Slot(ref_texts=[text], faulted_text=text)

    slots.append(filler())
    slots.append(filler())

    for n in range(faults.get(IssueKind.CONTEXTUAL_SPELLING, 0)):
        right, wrong, template, rationale = SPELLING_PLANTS[n % len(SPELLING_PLANTS)]
        ref_text = template.format(word=right)
        bad_text = template.format(word=wrong)
        slots.append(_Slot(
            ref_texts=[(ref_text,)], faulted_text=(bad_text,),
            spell={"word": wrong, "rationale": rationale, "candidates": [right]},
            truth={IssueKind.CONTEXTUAL_SPELLING.value: True}))
        slots.append(filler())

    for n in range(faults.get(IssueKind.HARMFUL_WORD, 0)):
        word = HARM_PLANTS[n % len(HARM_PLANTS)]
        raw = f"Do not be a {word} about the measurements."
        masked = raw.replace(word, "*" * len(word))
        slots.append(_Slot(
            ref_texts=[(masked,)], faulted_text=(raw,), spoken=raw,
            harm_word=word, truth={IssueKind.HARMFUL_WORD.value: True}))
        slots.append(filler())

    for n in range(faults.get(IssueKind.TIME_SYNC, 0)):
        spoken, shown = SYNC_PLANTS[n % len(SYNC_PLANTS)]
        slots.append(_Slot(
            ref_texts=[(spoken,)], faulted_text=(shown,), spoken=spoken,
            truth={IssueKind.TIME_SYNC.value: True}))
        slots.append(filler())

    for n in range(faults.get(IssueKind.NON_WORD, 0)):
        slots.append(_Slot(
            ref_texts=[("♪", "[music]")], faulted_text=("♪",),
            spoken="", events=list(MUSIC_EVENTS),
            truth={IssueKind.NON_WORD.value: True}))
        slots.append(filler())

    for n in range(faults.get(IssueKind.SEGMENTATION, 0)):
        parts = SEGMENTATION_PLANTS[n % len(SEGMENTATION_PLANTS)]
        slots.append(_Slot(
            ref_texts=[(p,) for p in parts], faulted_text=(" ".join(parts),),
            merged=True, truth={IssueKind.SEGMENTATION.value: True}))
        slots.append(filler())

    for n in range(faults.get(IssueKind.POSITIONING, 0)):
        text = (POSITIONING_TEXTS[n % len(POSITIONING_TEXTS)],)
        slots.append(_Slot(ref_texts=[text], faulted_text=text, frame="poisoned",
                           truth={IssueKind.POSITIONING.value: True}))
        slots.append(filler())

    for n in range(faults.get(IssueKind.FONT_COLOR, 0)):
        text = (FONTCOLOR_TEXTS[n % len(FONTCOLOR_TEXTS)],)
        slots.append(_Slot(ref_texts=[text], faulted_text=text, frame="bright",
                           truth={IssueKind.FONT_COLOR.value: True}))
        slots.append(filler())

    # Lay out the timeline and materialize both documents plus assets.
    ref_cues: list[Cue] = []
    faulted_cues: list[Cue] = []
    truth_rows: list[dict] = []
    t = 1000
    for slot in slots:
        duration = _duration_for(" ".join(" ".join(l) for l in slot.ref_texts))
        start, end = t, t + duration
        t = end + 200

        cue_id = len(faulted_cues) + 1
        faulted_cues.append(Cue(id=cue_id, start_ms=start, end_ms=end,
                                lines=slot.faulted_text))

        if slot.merged:
            # Reference keeps the original split; pieces tile [start, end).
            piece_bounds = [start]
            total_chars = sum(len(" ".join(l)) for l in slot.ref_texts)
            acc = 0
            for lines in slot.ref_texts[:-1]:
                acc += len(" ".join(lines))
                piece_bounds.append(start + round(duration * acc / total_chars))
            piece_bounds.append(end)
            for k, lines in enumerate(slot.ref_texts):
                ref_cues.append(Cue(id=len(ref_cues) + 1, start_ms=piece_bounds[k],
                                    end_ms=piece_bounds[k + 1], lines=lines))
        else:
            for lines in slot.ref_texts:
                ref_cues.append(Cue(id=len(ref_cues) + 1, start_ms=start, end_ms=end,
                                    lines=lines))

        for kind in IssueKind:
            truth_rows.append({"cue_id": cue_id, "kind": kind.value,
                               "truth": bool(slot.truth.get(kind.value, False))})

        # Assets for this cue.
        cue_dir = assets / str(cue_id)
        cue_dir.mkdir(parents=True, exist_ok=True)
        cue_dir.joinpath("audio.wav").write_bytes(
            write_wav(silence_clip(cue_id, duration)))
        cue_dir.joinpath("frame.ppm").write_bytes(
            write_ppm(corpus_frame(slot.frame, cue_id)))

        spoken = _spoken_text(slot)
        words = []
        if spoken:
            if slot.merged:
                # Word ends of each piece's last word hit the piece boundary
                # exactly, so split realignment reproduces the reference cues.
                rel_bounds = [b - start for b in piece_bounds]
                for k, lines in enumerate(slot.ref_texts):
                    piece_words = " ".join(lines).split()
                    s, e = rel_bounds[k], rel_bounds[k + 1]
                    n_words = len(piece_words)
                    for j, token in enumerate(piece_words):
                        w_start = s + (e - s) * j // n_words
                        w_end = s + (e - s) * (j + 1) // n_words
                        words.append({"text": token, "start_ms": w_start,
                                      "end_ms": w_end, "confidence": 0.95})
            else:
                tokens = spoken.split()
                for j, token in enumerate(tokens):
                    w_start = duration * j // len(tokens)
                    w_end = duration * (j + 1) // len(tokens)
                    words.append({"text": token, "start_ms": w_start,
                                  "end_ms": w_end, "confidence": 0.95})
        cue_dir.joinpath("transcript.json").write_text(
            json.dumps(words, indent=1), "utf-8")
        cue_dir.joinpath("events.json").write_text(
            json.dumps(slot.events, indent=1), "utf-8")

    ref_doc = SubtitleDoc(format=SubtitleFormat.SRT, cues=tuple(ref_cues))
    faulted_doc = SubtitleDoc(format=SubtitleFormat.SRT, cues=tuple(faulted_cues))

    assets.joinpath("manifest.json").write_text(json.dumps(
        {"duration_ms": t + 1000, "width": FRAME_W, "height": FRAME_H, "fps": 30.0},
        sort_keys=True), "utf-8")

    # Mock LLM table over the faulted document (what detection will see).
    table: dict[str, object] = {}
    for i, cue in enumerate(faulted_doc.cues):
        slot = slots[i]
        context = faulted_doc.cues[max(0, i - 3):i]
        findings = []
        if slot.spell:
            text = cue.text
            at = text.index(slot.spell["word"])
            findings.append({"word": slot.spell["word"],
                             "char_span": [at, at + len(slot.spell["word"])],
                             "rationale": slot.spell["rationale"]})
            fix_req = build_spell_fix_request(cue, slot.spell["word"],
                                              slot.spell["rationale"])
            table[prompt_key(fix_req)] = {"candidates": slot.spell["candidates"]}
        table[prompt_key(build_spell_detect_request(cue, context))] = {"findings": findings}
        spans = []
        if slot.harm_word:
            at = cue.text.index(slot.harm_word)
            spans.append({"start": at, "end": at + len(slot.harm_word)})
        table[prompt_key(build_harm_request(cue))] = {"spans": spans}

    ref_path = out / "ref.srt"
    subs_path = out / "input.srt"
    truth_path = out / "truth.json"
    mock_llm_path = out / "mock_llm.json"
    config_path = out / "config.cfg"
    ref_path.write_text(serialize_srt(ref_doc), "utf-8")
    subs_path.write_text(serialize_srt(faulted_doc), "utf-8")
    truth_path.write_text(json.dumps(truth_rows, indent=1, sort_keys=True), "utf-8")
    mock_llm_path.write_text(json.dumps(table, indent=1, sort_keys=True), "utf-8")
    # Paths are relative to the config file so regeneration into any
    # directory is byte-identical.
    config_path.write_text(
        "backend.llm=mock\n"
        "backend.llm_table=mock_llm.json\n"
        "backend.asr=assets\n"
        "backend.events=assets\n", "utf-8")

    return CorpusBundle(out_dir=out, ref_doc=ref_doc, faulted_doc=faulted_doc,
                        truth=truth_rows, ref_path=ref_path, subs_path=subs_path,
                        truth_path=truth_path, assets_dir=assets,
                        mock_llm_path=mock_llm_path, config_path=config_path)
