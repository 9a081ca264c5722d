"""Applying accepted suggestions to a document.

One engine serves the batch fixer, the stage-by-stage evaluator, and the
review service, so their outputs agree byte for byte.  Per cue, text-level
edits land before structural splits (span offsets are defined on pre-split
text); splits then re-distribute the current text into the precomputed
segments, and all cues are renumbered at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .issues import (
    AppendTag,
    Issue,
    MaskSpans,
    MoveRegion,
    ReplaceText,
    SetColor,
    SplitCue,
    Suggestion,
)
from .lang_issues import mask_text
from .subtitle_core import Cue, Region, SubtitleDoc, region_to_settings


@dataclass(frozen=True)
class Placement:
    region: Optional[Region] = None
    font_color: Optional[str] = None

    def to_json(self) -> dict:
        return {"region": self.region.to_json() if self.region else None,
                "font_color": self.font_color}


@dataclass
class ApplyResult:
    doc: SubtitleDoc
    placements: dict[int, Placement]  # keyed by final cue id
    conflicts: list[str]
    id_map: dict[int, list[int]]  # original cue id -> final cue ids


def apply_text_suggestion(lines: tuple[str, ...], suggestion: Suggestion) -> tuple[str, ...]:
    """Apply a text-level suggestion to cue lines; raises ValueError on conflict."""
    if isinstance(suggestion, ReplaceText):
        return suggestion.lines
    if isinstance(suggestion, MaskSpans):
        return tuple(mask_text("\n".join(lines), suggestion.spans).split("\n"))
    if isinstance(suggestion, AppendTag):
        return lines + (f"[{suggestion.label}]",)
    raise TypeError(f"not a text suggestion: {suggestion!r}")


def _redistribute_split(cue: Cue, split: SplitCue, conflicts: list[str]) -> list[Cue]:
    """Fill the split's precomputed segments from the cue's current text.

    Word counts per segment come from the suggestion; if the current text
    no longer has the same word count (a conflicting text edit), the
    structural fix wins with its own precomputed text.
    """
    counts = [len(" ".join(seg.lines).split()) for seg in split.cues]
    words = " ".join(cue.lines).split()
    segments = list(split.cues)
    if sum(counts) == len(words):
        texts = []
        at = 0
        for count in counts:
            texts.append(" ".join(words[at:at + count]))
            at += count
        segments = [replace(seg, lines=(text,)) for seg, text in zip(segments, texts)]
    else:
        conflicts.append(
            f"cue {cue.id}: text edits changed the word count ({len(words)} vs "
            f"{sum(counts)}); split kept its original text")
    return [replace(seg, position=cue.position, settings=cue.settings)
            for seg in segments]


def _with_region(cue: Cue, region: Region) -> Cue:
    settings = region_to_settings(region, cue.settings) if cue.settings else cue.settings
    return replace(cue, position=region, settings=settings)


def apply_all(doc: SubtitleDoc, issues: Sequence[Issue]) -> ApplyResult:
    by_cue: dict[int, list[Issue]] = {}
    for issue in issues:
        by_cue.setdefault(issue.cue_id, []).append(issue)

    conflicts: list[str] = []
    out: list[tuple[int, Cue, Placement]] = []  # (original id, cue, placement)
    for cue in doc.cues:
        cue_issues = sorted(by_cue.get(cue.id, []),
                            key=lambda i: (i.kind.order, i.issue_id))
        current = cue
        replace_seen = False
        split: Optional[SplitCue] = None
        region: Optional[Region] = None
        color: Optional[str] = None
        for issue in cue_issues:
            s = issue.suggestion
            if s is None:
                continue
            if isinstance(s, (ReplaceText, MaskSpans, AppendTag)):
                if isinstance(s, ReplaceText):
                    if replace_seen:
                        conflicts.append(
                            f"cue {cue.id}: multiple text replacements; later one "
                            f"({issue.issue_id}) overwrote the earlier")
                    replace_seen = True
                try:
                    current = replace(current, lines=apply_text_suggestion(current.lines, s))
                except ValueError as e:
                    conflicts.append(f"cue {cue.id}: {issue.issue_id} not applicable: {e}")
            elif isinstance(s, SplitCue):
                split = s
            elif isinstance(s, MoveRegion):
                region = s.region
            elif isinstance(s, SetColor):
                color = s.color
        segments = _redistribute_split(current, split, conflicts) if split else [current]
        if region is not None:
            segments = [_with_region(seg, region) for seg in segments]
        placement = Placement(region=region, font_color=color)
        for seg in segments:
            out.append((cue.id, seg, placement))

    final_cues = []
    placements: dict[int, Placement] = {}
    id_map: dict[int, list[int]] = {}
    for new_id, (orig_id, cue, placement) in enumerate(out, start=1):
        final_cues.append(replace(cue, id=new_id))
        id_map.setdefault(orig_id, []).append(new_id)
        if placement.region is not None or placement.font_color is not None:
            placements[new_id] = placement
    new_doc = SubtitleDoc(format=doc.format, header=doc.header, cues=tuple(final_cues))
    return ApplyResult(doc=new_doc, placements=placements, conflicts=conflicts,
                       id_map=id_map)


def select_accepted(issues: Iterable[Issue], decisions: Optional[dict] = None) -> list[Issue]:
    """Issues to apply: all of them, or those accepted/edited in a decisions map.

    ``decisions`` maps issue_id -> {"action": "accept"|"reject"|"edit",
    "payload": suggestion JSON when action is "edit"}.
    """
    from .issues import suggestion_from_json

    selected = []
    for issue in issues:
        if decisions is None:
            selected.append(issue)
            continue
        decision = decisions.get(issue.issue_id)
        if decision is None or decision.get("action") == "reject":
            continue
        if decision.get("action") == "edit":
            payload = suggestion_from_json(decision.get("payload"))
            selected.append(replace(issue, suggestion=payload))
        else:
            selected.append(issue)
    return selected
