"""Shared vocabulary for detected defects and their machine-applicable edits."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .subtitle_core import Cue, Region


class IssueKind(str, Enum):
    CONTEXTUAL_SPELLING = "contextual_spelling"
    HARMFUL_WORD = "harmful_word"
    TIME_SYNC = "time_sync"
    NON_WORD = "non_word"
    SEGMENTATION = "segmentation"
    POSITIONING = "positioning"
    FONT_COLOR = "font_color"

    @property
    def order(self) -> int:
        return _KIND_ORDER[self]

    @property
    def is_textual(self) -> bool:
        """Kinds whose suggestions rewrite cue text (vs structure/placement)."""
        return self in (IssueKind.CONTEXTUAL_SPELLING, IssueKind.HARMFUL_WORD,
                        IssueKind.TIME_SYNC, IssueKind.NON_WORD)


_KIND_ORDER = {k: i for i, k in enumerate(IssueKind)}

LANGUAGE_KINDS = (IssueKind.CONTEXTUAL_SPELLING, IssueKind.HARMFUL_WORD,
                  IssueKind.TIME_SYNC, IssueKind.NON_WORD, IssueKind.SEGMENTATION)
IMAGE_KINDS = (IssueKind.POSITIONING, IssueKind.FONT_COLOR)


@dataclass(frozen=True)
class ReplaceText:
    lines: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.lines or any(not l for l in self.lines):
            raise ValueError("replacement lines must be non-empty")


@dataclass(frozen=True)
class MaskSpans:
    spans: tuple[tuple[int, int], ...]  # over "\n"-joined cue text


@dataclass(frozen=True)
class AppendTag:
    label: str  # rendered as a final "[label]" line


@dataclass(frozen=True)
class SplitCue:
    cues: tuple[Cue, ...]

    def __post_init__(self) -> None:
        if len(self.cues) < 2:
            raise ValueError("a split produces at least two cues")
        for a, b in zip(self.cues, self.cues[1:]):
            if a.end_ms != b.start_ms:
                raise ValueError("split cues must tile the original interval")


@dataclass(frozen=True)
class MoveRegion:
    region: Region


@dataclass(frozen=True)
class SetColor:
    color: str  # "black" | "white"

    def __post_init__(self) -> None:
        if self.color not in ("black", "white"):
            raise ValueError(f"font color must be black or white, got {self.color!r}")


Suggestion = Union[ReplaceText, MaskSpans, AppendTag, SplitCue, MoveRegion, SetColor]


def suggestion_to_json(s: Optional[Suggestion]) -> Optional[dict]:
    if s is None:
        return None
    if isinstance(s, ReplaceText):
        return {"type": "replace_text", "lines": list(s.lines)}
    if isinstance(s, MaskSpans):
        return {"type": "mask_spans", "spans": [list(p) for p in s.spans]}
    if isinstance(s, AppendTag):
        return {"type": "append_tag", "label": s.label}
    if isinstance(s, SplitCue):
        return {"type": "split_cue", "cues": [c.to_json() for c in s.cues]}
    if isinstance(s, MoveRegion):
        return {"type": "move_region", "region": s.region.to_json()}
    if isinstance(s, SetColor):
        return {"type": "set_color", "color": s.color}
    raise TypeError(f"unknown suggestion {s!r}")


def suggestion_from_json(obj: Optional[dict]) -> Optional[Suggestion]:
    if obj is None:
        return None
    kind = obj.get("type")
    if kind == "replace_text":
        return ReplaceText(lines=tuple(obj["lines"]))
    if kind == "mask_spans":
        return MaskSpans(spans=tuple((int(a), int(b)) for a, b in obj["spans"]))
    if kind == "append_tag":
        return AppendTag(label=obj["label"])
    if kind == "split_cue":
        return SplitCue(cues=tuple(Cue.from_json(c) for c in obj["cues"]))
    if kind == "move_region":
        return MoveRegion(region=Region.from_json(obj["region"]))
    if kind == "set_color":
        return SetColor(color=obj["color"])
    raise ValueError(f"unknown suggestion type {kind!r}")


@dataclass(frozen=True)
class Issue:
    issue_id: str
    cue_id: int
    kind: IssueKind
    evidence: dict
    suggestion: Optional[Suggestion]

    def to_json(self) -> dict:
        return {
            "issue_id": self.issue_id,
            "cue_id": self.cue_id,
            "kind": self.kind.value,
            "evidence": self.evidence,
            "suggestion": suggestion_to_json(self.suggestion),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Issue":
        return cls(
            issue_id=obj["issue_id"],
            cue_id=obj["cue_id"],
            kind=IssueKind(obj["kind"]),
            evidence=obj["evidence"],
            suggestion=suggestion_from_json(obj.get("suggestion")),
        )


def make_issue_id(cue_id: int, kind: IssueKind, ordinal: int = 1) -> str:
    return f"{cue_id:04d}-{kind.value}-{ordinal}"


@dataclass(frozen=True)
class Skip:
    """A detector that could not run for one cue."""

    cue_id: int
    detector: str
    reason: str

    def to_json(self) -> dict:
        return {"cue_id": self.cue_id, "detector": self.detector, "reason": self.reason}

    @classmethod
    def from_json(cls, obj: dict) -> "Skip":
        return cls(cue_id=obj["cue_id"], detector=obj["detector"], reason=obj["reason"])


def sort_issues(issues: list[Issue]) -> list[Issue]:
    return sorted(issues, key=lambda i: (i.cue_id, i.kind.order, i.issue_id))
