"""Backends for the three model capabilities: text LLM, ASR, audio events.

Each capability has one networked implementation (JSON over HTTP) and one
deterministic offline implementation (a prompt-keyed response table for the
LLM, per-cue asset files for ASR and event classification).  Offline
implementations are pure functions of their inputs, which is what makes
whole-pipeline runs reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import httpx

from .media_ingest import AudioClip, write_wav

log = logging.getLogger(__name__)

LLM_BASE_URL_ENV = "VSAT_LLM_BASE_URL"
LLM_MODEL_ENV = "VSAT_LLM_MODEL"
LLM_API_KEY_ENV = "VSAT_LLM_API_KEY"

MAX_ATTEMPTS = 3
BACKOFF_BASE_S = 0.5


class BackendError(Exception):
    """Base error for backend failures (the affected detector is skipped)."""


class BackendUnavailableError(BackendError):
    pass


class SchemaError(BackendError):
    """Backend response does not match the expected structure."""


class MockEntryMissingError(BackendError):
    pass


class SchemaId(str, Enum):
    SPELL_FINDINGS = "spell_findings"
    SPELL_FIX = "spell_fix"
    HARM_SPANS = "harm_spans"


@dataclass(frozen=True)
class LlmRequest:
    system_prompt: str
    user_prompt: str
    response_schema_id: SchemaId
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if self.temperature != 0.0:
            raise ValueError("temperature is pinned to 0 for reproducibility")


@dataclass(frozen=True)
class TranscriptWord:
    text: str
    start_ms: int
    end_ms: int
    confidence: float

    def __post_init__(self) -> None:
        if self.start_ms >= self.end_ms:
            raise ValueError(f"word {self.text!r}: start_ms >= end_ms")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"word {self.text!r}: confidence {self.confidence} out of [0,1]")


@dataclass(frozen=True)
class EventScore:
    label: str
    score: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"event {self.label!r}: score {self.score} out of [0,1]")


# ---------------------------------------------------------------------------
# Structured LLM responses

@dataclass(frozen=True)
class RawSpellFinding:
    word: str
    char_span: tuple[int, int]
    rationale: str


@dataclass(frozen=True)
class SpellFindingsPayload:
    findings: tuple[RawSpellFinding, ...]

    def to_json(self) -> dict:
        return {"findings": [
            {"word": f.word, "char_span": list(f.char_span), "rationale": f.rationale}
            for f in self.findings]}


@dataclass(frozen=True)
class SpellFixPayload:
    candidates: tuple[str, ...]

    def to_json(self) -> dict:
        return {"candidates": list(self.candidates)}


@dataclass(frozen=True)
class HarmSpansPayload:
    spans: tuple[tuple[int, int], ...]

    def to_json(self) -> dict:
        return {"spans": [{"start": s, "end": e} for s, e in self.spans]}


def _require(obj: dict, key: str, types) -> object:
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing required field {key!r}")
    value = obj[key]
    if not isinstance(value, types):
        raise SchemaError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def _span_pair(obj, what: str) -> tuple[int, int]:
    if (not isinstance(obj, (list, tuple)) or len(obj) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in obj)):
        raise SchemaError(f"{what} must be a [start, end] integer pair")
    start, end = obj
    if start < 0 or end <= start:
        raise SchemaError(f"{what} [{start},{end}) is not a valid span")
    return start, end


def parse_llm_payload(schema_id: SchemaId, obj: object):
    """Validate a parsed JSON value against the schema; returns a typed payload."""
    if schema_id is SchemaId.SPELL_FINDINGS:
        findings = []
        for raw in _require(obj, "findings", list):
            word = _require(raw, "word", str)
            span = _span_pair(_require(raw, "char_span", list), "char_span")
            rationale = _require(raw, "rationale", str)
            findings.append(RawSpellFinding(word=word, char_span=span, rationale=rationale))
        return SpellFindingsPayload(findings=tuple(findings))
    if schema_id is SchemaId.SPELL_FIX:
        candidates = _require(obj, "candidates", list)
        if not all(isinstance(c, str) for c in candidates):
            raise SchemaError("candidates must be strings")
        return SpellFixPayload(candidates=tuple(candidates))
    if schema_id is SchemaId.HARM_SPANS:
        spans = []
        for raw in _require(obj, "spans", list):
            start = _require(raw, "start", int)
            end = _require(raw, "end", int)
            spans.append(_span_pair([start, end], "span"))
        return HarmSpansPayload(spans=tuple(spans))
    raise ValueError(f"unknown schema {schema_id}")


def parse_llm_text(schema_id: SchemaId, text: str):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"response is not JSON: {e}") from e
    return parse_llm_payload(schema_id, obj)


def load_prompt(name: str) -> str:
    return resources.files("vsat").joinpath(f"prompts/{name}.txt").read_text("utf-8")


def prompt_key(req: LlmRequest) -> str:
    """Stable key for mock-table lookups."""
    h = hashlib.sha256()
    for part in (req.response_schema_id.value, req.system_prompt, req.user_prompt):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


class LlmBackend(Protocol):
    def complete(self, req: LlmRequest): ...


class MockLlm:
    """Table-driven LLM: maps prompt_key(req) to a canned response.

    Table values may be JSON objects or JSON text; both go through the same
    schema validation as networked responses.
    """

    def __init__(self, table: Mapping[str, object]):
        self.table = dict(table)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockLlm":
        return cls(json.loads(Path(path).read_text("utf-8")))

    def complete(self, req: LlmRequest):
        key = prompt_key(req)
        if key not in self.table:
            raise MockEntryMissingError(
                f"no mock entry for {req.response_schema_id.value} prompt (key {key[:12]}…)")
        value = self.table[key]
        if isinstance(value, str):
            return parse_llm_text(req.response_schema_id, value)
        return parse_llm_payload(req.response_schema_id, value)


class HttpLlm:
    """Chat-completion-style JSON-over-HTTP client.

    One extra attempt is made when the response fails schema validation;
    transport errors are retried with exponential backoff.
    """

    def __init__(self, base_url: str, model: str, api_key: str = "",
                 timeout_s: float = 30.0, max_attempts: int = MAX_ATTEMPTS,
                 backoff_base_s: float = BACKOFF_BASE_S, max_in_flight: int = 4):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        import threading
        self._gate = threading.Semaphore(max_in_flight)

    def _post(self, req: LlmRequest) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "response_format": {"type": "json_object"},
        }
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base_s * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = httpx.post(f"{self.base_url}/chat/completions",
                                      json=body, headers=headers, timeout=self.timeout_s)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as e:
                last_error = e
                log.warning("LLM attempt %d/%d failed: %s", attempt + 1, self.max_attempts, e)
        raise BackendUnavailableError(f"LLM unreachable after {self.max_attempts} attempts: {last_error}")

    def complete(self, req: LlmRequest):
        text = self._post(req)
        try:
            return parse_llm_text(req.response_schema_id, text)
        except SchemaError as e:
            log.warning("LLM response failed schema validation (%s); retrying once", e)
            text = self._post(req)
            return parse_llm_text(req.response_schema_id, text)


# ---------------------------------------------------------------------------
# ASR

def _normalize_word_sequence(words: list[TranscriptWord]) -> list[TranscriptWord]:
    """Sort and de-overlap ASR words; slight overlaps are shifted, not rejected."""
    out: list[TranscriptWord] = []
    for word in sorted(words, key=lambda w: (w.start_ms, w.end_ms)):
        if out and word.start_ms < out[-1].end_ms:
            if out[-1].end_ms >= word.end_ms:
                raise SchemaError(
                    f"transcript word {word.text!r} is contained inside the previous word")
            log.warning("overlapping transcript words: shifting %r start %d -> %d",
                        word.text, word.start_ms, out[-1].end_ms)
            word = TranscriptWord(text=word.text, start_ms=out[-1].end_ms,
                                  end_ms=word.end_ms, confidence=word.confidence)
        out.append(word)
    return out


def parse_transcript_json(obj: object) -> list[TranscriptWord]:
    if not isinstance(obj, list):
        raise SchemaError("transcript must be a list of word objects")
    words = []
    for raw in obj:
        words.append(TranscriptWord(
            text=_require(raw, "text", str),
            start_ms=_require(raw, "start_ms", int),
            end_ms=_require(raw, "end_ms", int),
            confidence=float(_require(raw, "confidence", (int, float))),
        ))
    return _normalize_word_sequence(words)


class AsrBackend(Protocol):
    def transcribe(self, clip: AudioClip) -> list[TranscriptWord]: ...


class AssetAsr:
    def __init__(self, assets_dir: str | Path):
        self.root = Path(assets_dir)

    def transcribe(self, clip: AudioClip) -> list[TranscriptWord]:
        path = self.root / str(clip.cue_id) / "transcript.json"
        if not path.is_file():
            raise BackendUnavailableError(f"missing transcript asset {path}")
        try:
            return parse_transcript_json(json.loads(path.read_text("utf-8")))
        except json.JSONDecodeError as e:
            raise SchemaError(f"malformed {path}: {e}") from e


class HttpAsr:
    def __init__(self, base_url: str, timeout_s: float = 60.0,
                 max_attempts: int = MAX_ATTEMPTS, backoff_base_s: float = BACKOFF_BASE_S):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s

    def transcribe(self, clip: AudioClip) -> list[TranscriptWord]:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base_s * 2 ** (attempt - 1))
            try:
                resp = httpx.post(f"{self.base_url}/transcribe", content=write_wav(clip),
                                  headers={"Content-Type": "audio/wav"}, timeout=self.timeout_s)
                resp.raise_for_status()
                return parse_transcript_json(resp.json().get("words", []))
            except httpx.HTTPError as e:
                last_error = e
        raise BackendUnavailableError(f"ASR unreachable: {last_error}")


# ---------------------------------------------------------------------------
# Audio event classification

def load_event_labels() -> tuple[str, ...]:
    text = resources.files("vsat").joinpath("data/audio_event_labels.txt").read_text("utf-8")
    return tuple(line for line in text.splitlines() if line)


def pool_event_windows(windows: Sequence[Sequence[EventScore]],
                       labels: frozenset[str]) -> list[EventScore]:
    """Clip-level scores: per-label maximum over windows, sorted descending."""
    best: dict[str, float] = {}
    for window in windows:
        for event in window:
            if event.label not in labels:
                raise SchemaError(f"unknown audio event label {event.label!r}")
            if event.score > best.get(event.label, -1.0):
                best[event.label] = event.score
    pooled = [EventScore(label=l, score=s) for l, s in best.items()]
    pooled.sort(key=lambda e: (-e.score, e.label))
    return pooled


def parse_events_json(obj: object, labels: frozenset[str]) -> list[EventScore]:
    """Accept either a flat event list (one window) or a list of windows."""
    if not isinstance(obj, list):
        raise SchemaError("events must be a list")
    if obj and isinstance(obj[0], list):
        windows = obj
    else:
        windows = [obj]
    parsed = []
    for window in windows:
        try:
            parsed.append([EventScore(label=_require(raw, "label", str),
                                      score=float(_require(raw, "score", (int, float))))
                           for raw in window])
        except ValueError as e:
            raise SchemaError(str(e)) from e
    return pool_event_windows(parsed, labels)


class EventsBackend(Protocol):
    def classify(self, clip: AudioClip) -> list[EventScore]: ...


class AssetEvents:
    def __init__(self, assets_dir: str | Path, labels: Sequence[str] | None = None):
        self.root = Path(assets_dir)
        self.labels = frozenset(labels if labels is not None else load_event_labels())

    def classify(self, clip: AudioClip) -> list[EventScore]:
        path = self.root / str(clip.cue_id) / "events.json"
        if not path.is_file():
            raise BackendUnavailableError(f"missing events asset {path}")
        try:
            return parse_events_json(json.loads(path.read_text("utf-8")), self.labels)
        except json.JSONDecodeError as e:
            raise SchemaError(f"malformed {path}: {e}") from e


class HttpEvents:
    def __init__(self, base_url: str, labels: Sequence[str] | None = None,
                 timeout_s: float = 60.0, max_attempts: int = MAX_ATTEMPTS,
                 backoff_base_s: float = BACKOFF_BASE_S):
        self.base_url = base_url.rstrip("/")
        self.labels = frozenset(labels if labels is not None else load_event_labels())
        self.timeout_s = timeout_s
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s

    def classify(self, clip: AudioClip) -> list[EventScore]:
        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base_s * 2 ** (attempt - 1))
            try:
                resp = httpx.post(f"{self.base_url}/classify", content=write_wav(clip),
                                  headers={"Content-Type": "audio/wav"}, timeout=self.timeout_s)
                resp.raise_for_status()
                return parse_events_json(resp.json().get("events", []), self.labels)
            except httpx.HTTPError as e:
                last_error = e
        raise BackendUnavailableError(f"event classifier unreachable: {last_error}")
