"""Language-mode detectors: spelling-in-context, harmful words, time sync,
non-word audio tags, and segmentation.

Detectors never mutate the document; every proposed correction lives in the
issue's :class:`~vsat.issues.Suggestion` until a human applies it.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from .issues import (
    AppendTag,
    Issue,
    IssueKind,
    MaskSpans,
    ReplaceText,
    Skip,
    SplitCue,
    Suggestion,
    make_issue_id,
    sort_issues,
)
from .media_ingest import AudioClip
from .model_backends import (
    BackendError,
    LlmRequest,
    SchemaId,
    TranscriptWord,
    load_prompt,
)
from .subtitle_core import Cue, SubtitleDoc

log = logging.getLogger(__name__)

SIMILARITY_THRESHOLD = 0.7
EVENT_THRESHOLD = 0.3
MAX_CPL = 50
CONTEXT_WINDOW = 3
SPEECH_LABEL = "Speech"

# Rule 1: a candidate may not be the original plus one of these suffixes.
RULE1_SUFFIXES = ("y", "ness", "ful", "less", "ed", "ly", "ing", "s", "es")

_BRACKET_TAG = re.compile(r"\[[^\]\n]*\]")
_TOKEN = re.compile(r"[^\W_]+(?:['’][^\W_]+)*", re.UNICODE)


def normalize_tokens(text: str) -> list[str]:
    """Lowercase tokens, punctuation stripped, bracketed [tags] dropped.

    Apostrophes survive only inside a word ("don't" stays one token).
    """
    text = _BRACKET_TAG.sub(" ", text)
    return _TOKEN.findall(text.casefold())


def cosine_bow(tokens_a: Sequence[str], tokens_b: Sequence[str]) -> float:
    """Cosine of term-count vectors. Both empty: 1.0; exactly one empty: 0.0."""
    if not tokens_a and not tokens_b:
        return 1.0
    if not tokens_a or not tokens_b:
        return 0.0
    ca, cb = Counter(tokens_a), Counter(tokens_b)
    dot = sum(ca[t] * cb[t] for t in ca.keys() & cb.keys())
    na2 = sum(v * v for v in ca.values())
    nb2 = sum(v * v for v in cb.values())
    return dot / math.sqrt(na2 * nb2)


@dataclass(frozen=True)
class SpellFinding:
    word: str
    char_span: tuple[int, int]  # into "\n"-joined cue text
    candidates: tuple[str, ...]
    rationale: str

    def __post_init__(self) -> None:
        if not self.candidates:
            raise ValueError("a finding needs at least one surviving candidate")


@dataclass(frozen=True)
class RuleCheck:
    passed: bool
    failed_rule: Optional[int] = None


def validate_spell_rules(original: str, candidate: str) -> RuleCheck:
    """Programmatic checks on a replacement candidate.

    Rule 1 rejects suffix-only derivations of the original; Rule 3 rejects
    the identical word.  Rule 2 ("meaningful and contextual") has no
    programmatic test and stays delegated to the language model.
    """
    orig = original.casefold()
    cand = candidate.casefold()
    if cand == orig:
        return RuleCheck(passed=False, failed_rule=3)
    for suffix in RULE1_SUFFIXES:
        if cand == orig + suffix:
            return RuleCheck(passed=False, failed_rule=1)
    return RuleCheck(passed=True)


def _context_text(context: Sequence[Cue], window: int) -> str:
    tail = list(context)[-window:]
    if not tail:
        return "(none)"
    return "\n".join(c.text for c in tail)


def build_spell_detect_request(cue: Cue, context: Sequence[Cue],
                               window: int = CONTEXT_WINDOW) -> LlmRequest:
    return LlmRequest(
        system_prompt=load_prompt("spell_detect.system"),
        user_prompt=load_prompt("spell_detect.user").format(
            context=_context_text(context, window), text=cue.text),
        response_schema_id=SchemaId.SPELL_FINDINGS,
    )


def build_spell_fix_request(cue: Cue, word: str, rationale: str) -> LlmRequest:
    return LlmRequest(
        system_prompt=load_prompt("spell_fix.system"),
        user_prompt=load_prompt("spell_fix.user").format(
            word=word, rationale=rationale, text=cue.text),
        response_schema_id=SchemaId.SPELL_FIX,
    )


def build_harm_request(cue: Cue) -> LlmRequest:
    return LlmRequest(
        system_prompt=load_prompt("harm_detect.system"),
        user_prompt=load_prompt("harm_detect.user").format(text=cue.text),
        response_schema_id=SchemaId.HARM_SPANS,
    )


def detect_contextual_spelling(cue: Cue, context: Sequence[Cue], llm,
                               window: int = CONTEXT_WINDOW) -> list[SpellFinding]:
    """Two-step LLM pass: flag suspect words, then generate rule-checked fixes."""
    text = cue.text
    payload = llm.complete(build_spell_detect_request(cue, context, window))
    findings: list[SpellFinding] = []
    for raw in payload.findings:
        start, end = raw.char_span
        if end > len(text):
            log.warning("cue %d: finding span %r out of bounds, dropped", cue.id, raw.char_span)
            continue
        fix = llm.complete(build_spell_fix_request(cue, raw.word, raw.rationale))
        surviving = tuple(c for c in fix.candidates
                          if validate_spell_rules(raw.word, c).passed)
        if not surviving:
            continue
        findings.append(SpellFinding(word=raw.word, char_span=(start, end),
                                     candidates=surviving, rationale=raw.rationale))
    return findings


def _replace_span(text: str, span: tuple[int, int], replacement: str) -> str:
    return text[:span[0]] + replacement + text[span[1]:]


def spelling_issues(cue: Cue, context: Sequence[Cue], llm,
                    window: int = CONTEXT_WINDOW) -> list[Issue]:
    issues = []
    for n, finding in enumerate(detect_contextual_spelling(cue, context, llm, window), start=1):
        new_text = _replace_span(cue.text, finding.char_span, finding.candidates[0])
        issues.append(Issue(
            issue_id=make_issue_id(cue.id, IssueKind.CONTEXTUAL_SPELLING, n),
            cue_id=cue.id,
            kind=IssueKind.CONTEXTUAL_SPELLING,
            evidence={
                "word": finding.word,
                "char_span": list(finding.char_span),
                "candidates": list(finding.candidates),
                "rationale": finding.rationale,
                "rule_2": "llm-delegated, not programmatically checked",
            },
            suggestion=ReplaceText(lines=tuple(new_text.split("\n"))),
        ))
    return issues


def mask_text(text: str, spans: Sequence[tuple[int, int]]) -> str:
    """Replace every character inside each span with '*'.

    Length and everything outside the spans are preserved; spans may not
    cross line boundaries.
    """
    chars = list(text)
    for start, end in spans:
        if start < 0 or end > len(chars) or start >= end:
            raise ValueError(f"span [{start},{end}) out of bounds")
        if "\n" in text[start:end]:
            raise ValueError(f"span [{start},{end}) crosses a line boundary")
        for i in range(start, end):
            chars[i] = "*"
    return "".join(chars)


def detect_harmful(cue: Cue, llm) -> Optional[Issue]:
    payload = llm.complete(build_harm_request(cue))
    if not payload.spans:
        return None
    text = cue.text
    masked = mask_text(text, payload.spans)  # raises on bad spans
    return Issue(
        issue_id=make_issue_id(cue.id, IssueKind.HARMFUL_WORD),
        cue_id=cue.id,
        kind=IssueKind.HARMFUL_WORD,
        evidence={"spans": [list(s) for s in payload.spans],
                  "masked_preview": masked},
        suggestion=MaskSpans(spans=payload.spans),
    )


def detect_time_sync(cue: Cue, words: Sequence[TranscriptWord],
                     threshold: float = SIMILARITY_THRESHOLD) -> Optional[Issue]:
    """Flag cues whose text disagrees with what the audio actually says.

    Similarity is bag-of-words cosine; exactly hitting the threshold passes.
    """
    cue_tokens = normalize_tokens(" ".join(cue.lines))
    transcript_text = " ".join(w.text for w in words)
    transcript_tokens = normalize_tokens(transcript_text)
    similarity = cosine_bow(cue_tokens, transcript_tokens)
    if similarity >= threshold:
        return None
    suggestion: Optional[Suggestion] = None
    if transcript_text.strip():
        suggestion = ReplaceText(lines=(transcript_text.strip(),))
    return Issue(
        issue_id=make_issue_id(cue.id, IssueKind.TIME_SYNC),
        cue_id=cue.id,
        kind=IssueKind.TIME_SYNC,
        evidence={"similarity": similarity, "threshold": threshold,
                  "cue_tokens": cue_tokens, "transcript_tokens": transcript_tokens},
        suggestion=suggestion,
    )


def _has_tag(cue: Cue, label: str) -> bool:
    want = label.casefold()
    for line in cue.lines:
        for tag in _BRACKET_TAG.findall(line):
            if tag[1:-1].strip().casefold() == want:
                return True
    return False


def detect_non_word(cue: Cue, events, threshold: float = EVENT_THRESHOLD) -> Optional[Issue]:
    """Tag cues over non-speech audio with the top event label, once."""
    non_speech = [e for e in events if e.label != SPEECH_LABEL]
    if not non_speech:
        return None
    top = max(non_speech, key=lambda e: e.score)
    if top.score <= threshold:
        return None
    label = top.label.casefold()
    if _has_tag(cue, label):
        return None
    return Issue(
        issue_id=make_issue_id(cue.id, IssueKind.NON_WORD),
        cue_id=cue.id,
        kind=IssueKind.NON_WORD,
        evidence={"label": top.label, "score": top.score, "threshold": threshold,
                  "candidates": [[e.label, e.score] for e in non_speech[:5]]},
        suggestion=AppendTag(label=label),
    )


# ---------------------------------------------------------------------------
# Segmentation

def _pack_words(words: list[str], max_cpl: int) -> list[list[str]]:
    segments: list[list[str]] = []
    current: list[str] = []
    length = 0
    for word in words:
        added = len(word) if not current else length + 1 + len(word)
        if current and added > max_cpl:
            segments.append(current)
            current, length = [word], len(word)
        else:
            current.append(word)
            length = added
    if current:
        segments.append(current)
    return segments


def _segment_boundaries(segments: list[list[str]], words: Sequence[TranscriptWord],
                        cue: Cue) -> Optional[list[int]]:
    """Absolute boundary times between segments (len = n+1 incl. start/end).

    Boundaries anchor to the transcript end time of each segment's last
    word (matched monotonically by normalized token); unmatched or
    inconsistent anchors fall back to character-proportional placement.
    Returns None when the cue is too short to hold one ms per segment.
    """
    n = len(segments)
    start, end = cue.start_ms, cue.end_ms
    if end - start < n:
        return None

    bounds: list[Optional[int]] = [None] * (n + 1)
    bounds[0], bounds[n] = start, end

    wi = 0
    for i, segment in enumerate(segments[:-1]):
        tokens = normalize_tokens(segment[-1])
        key = tokens[-1] if tokens else None
        found = None
        if key is not None:
            j = wi
            while j < len(words):
                wt = normalize_tokens(words[j].text)
                if wt and wt[-1] == key:
                    found = j
                    break
                j += 1
        if found is not None:
            bounds[i + 1] = start + words[found].end_ms
            wi = found + 1

    # Drop anchors that break strict monotonicity or leave no room.
    last_known = 0
    for i in range(1, n):
        if bounds[i] is None:
            continue
        lo = bounds[last_known] + (i - last_known)
        hi = end - (n - i)
        if bounds[i] < lo or bounds[i] > hi:
            bounds[i] = None
        else:
            last_known = i

    # Fill gaps proportionally to segment character counts.
    seg_chars = [len(" ".join(s)) for s in segments]
    known = [i for i in range(n + 1) if bounds[i] is not None]
    for a, b in zip(known, known[1:]):
        if b - a == 1:
            continue
        span = bounds[b] - bounds[a]
        total = sum(seg_chars[a:b])
        acc = 0
        for k in range(a + 1, b):
            acc += seg_chars[k - 1]
            bounds[k] = bounds[a] + round(span * acc / total)
        for k in range(a + 1, b):
            bounds[k] = max(bounds[k], bounds[k - 1] + 1)
        for k in range(b - 1, a, -1):
            bounds[k] = min(bounds[k], bounds[k + 1] - 1)
    return [int(b) for b in bounds]


def split_cue(cue: Cue, words: Sequence[TranscriptWord] = (),
              max_cpl: int = MAX_CPL) -> list[Cue]:
    """Split an over-long cue into readable segments that tile its interval.

    Words are packed greedily up to ``max_cpl`` characters per segment;
    single words longer than the limit are hard-split with a warning.
    """
    pieces: list[str] = []
    for word in " ".join(cue.lines).split():
        if len(word) > max_cpl:
            log.warning("cue %d: word of %d chars hard-split at %d", cue.id, len(word), max_cpl)
            pieces.extend(word[i:i + max_cpl] for i in range(0, len(word), max_cpl))
        else:
            pieces.append(word)
    segments = _pack_words(pieces, max_cpl)
    if len(segments) <= 1:
        return [cue]
    bounds = _segment_boundaries(segments, words, cue)
    if bounds is None:
        log.warning("cue %d: too short to split into %d segments", cue.id, len(segments))
        return [cue]
    return [
        replace(cue, id=cue.id + i, start_ms=bounds[i], end_ms=bounds[i + 1],
                lines=(" ".join(segment),))
        for i, segment in enumerate(segments)
    ]


def detect_segmentation(cue: Cue, words: Sequence[TranscriptWord] = (),
                        max_cpl: int = MAX_CPL) -> Optional[Issue]:
    """Flag cues with any line over the CPL limit (strictly greater)."""
    if all(len(line) <= max_cpl for line in cue.lines):
        return None
    replacements = split_cue(cue, words, max_cpl)
    suggestion = SplitCue(cues=tuple(replacements)) if len(replacements) > 1 else None
    return Issue(
        issue_id=make_issue_id(cue.id, IssueKind.SEGMENTATION),
        cue_id=cue.id,
        kind=IssueKind.SEGMENTATION,
        evidence={"max_cpl": max_cpl, "line_lengths": [len(l) for l in cue.lines],
                  "segment_count": len(replacements)},
        suggestion=suggestion,
    )


@dataclass(frozen=True)
class LangOptions:
    spelling: bool = True
    harmful: bool = True
    timesync: bool = True
    nonword: bool = True
    segmentation: bool = True
    similarity_threshold: float = SIMILARITY_THRESHOLD
    event_threshold: float = EVENT_THRESHOLD
    max_cpl: int = MAX_CPL
    context_window: int = CONTEXT_WINDOW
    parallelism: int = 1


def run_language_pass(doc: SubtitleDoc, llm, asr, events_backend,
                      clips: Mapping[int, AudioClip],
                      options: LangOptions = LangOptions()) -> tuple[list[Issue], list[Skip]]:
    """Run all enabled language detectors over every cue.

    Backend failures skip the affected detector for that cue and are
    reported, never raised.  Output order is (cue_id, kind).
    """

    def process(index: int) -> tuple[list[Issue], list[Skip]]:
        cue = doc.cues[index]
        context = doc.cues[max(0, index - options.context_window):index]
        issues: list[Issue] = []
        skips: list[Skip] = []
        clip = clips.get(cue.id)

        if options.spelling:
            try:
                issues.extend(spelling_issues(cue, context, llm, options.context_window))
            except (BackendError, ValueError) as e:
                skips.append(Skip(cue.id, "spelling", str(e)))
        if options.harmful:
            try:
                issue = detect_harmful(cue, llm)
                if issue:
                    issues.append(issue)
            except (BackendError, ValueError) as e:
                skips.append(Skip(cue.id, "harmful", str(e)))

        words: list[TranscriptWord] = []
        words_ok = False
        if options.timesync or options.segmentation:
            if clip is None:
                if options.timesync:
                    skips.append(Skip(cue.id, "timesync", "no audio clip"))
            else:
                try:
                    words = asr.transcribe(clip)
                    words_ok = True
                except BackendError as e:
                    if options.timesync:
                        skips.append(Skip(cue.id, "timesync", str(e)))
        if options.timesync and words_ok:
            issue = detect_time_sync(cue, words, options.similarity_threshold)
            if issue:
                issues.append(issue)

        if options.nonword:
            if clip is None:
                skips.append(Skip(cue.id, "nonword", "no audio clip"))
            else:
                try:
                    scores = events_backend.classify(clip)
                    issue = detect_non_word(cue, scores, options.event_threshold)
                    if issue:
                        issues.append(issue)
                except BackendError as e:
                    skips.append(Skip(cue.id, "nonword", str(e)))

        if options.segmentation:
            issue = detect_segmentation(cue, words, options.max_cpl)
            if issue:
                issues.append(issue)
        return issues, skips

    all_issues: list[Issue] = []
    all_skips: list[Skip] = []
    if options.parallelism > 1 and len(doc.cues) > 1:
        with ThreadPoolExecutor(max_workers=options.parallelism) as pool:
            results = list(pool.map(process, range(len(doc.cues))))
    else:
        results = [process(i) for i in range(len(doc.cues))]
    for issues, skips in results:
        all_issues.extend(issues)
        all_skips.extend(skips)
    return sort_issues(all_issues), sorted(all_skips, key=lambda s: (s.cue_id, s.detector))
