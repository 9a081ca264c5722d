"""SRT/WebVTT documents: parsing, validation, serialization, tabulation.

Timecodes are plain integer milliseconds everywhere; the two text encodings
(SRT ``HH:MM:SS,mmm`` and VTT ``HH:MM:SS.mmm``) exist only at the file
boundary.  All types are immutable, so documents can be shared freely
between threads.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

# SRT is limited to two hour digits; 100h in ms.
MAX_SRT_MS = 360_000_000


class SubtitleFormat(str, Enum):
    SRT = "srt"
    VTT = "vtt"


class SubtitleParseError(ValueError):
    """Malformed subtitle input. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(message + suffix)


@dataclass(frozen=True)
class Region:
    """Normalized rectangle, top-left origin, all coordinates in [0, 1]."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError("region w/h must be positive")
        if self.x < 0 or self.y < 0 or self.x + self.w > 1 + 1e-9 or self.y + self.h > 1 + 1e-9:
            raise ValueError(f"region out of bounds: {self}")

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_json(cls, obj: dict) -> "Region":
        return cls(x=obj["x"], y=obj["y"], w=obj["w"], h=obj["h"])


# Default caption band: bottom center, 60% wide, 10% tall.
DEFAULT_REGION = Region(x=0.2, y=0.85, w=0.6, h=0.10)


@dataclass(frozen=True)
class Cue:
    """One timed subtitle block.

    ``id`` is the 1-based ordinal assigned at parse time; file-supplied
    indices are untrusted and discarded.  ``settings`` is the raw VTT
    cue-settings string, round-tripped opaquely.
    """

    id: int
    start_ms: int
    end_ms: int
    lines: tuple[str, ...]
    position: Optional[Region] = None
    settings: str = ""

    def __post_init__(self) -> None:
        if self.start_ms < 0:
            raise ValueError(f"cue {self.id}: negative start")
        if self.start_ms >= self.end_ms:
            raise ValueError(f"cue {self.id}: start >= end ({self.start_ms} >= {self.end_ms})")
        if not self.lines:
            raise ValueError(f"cue {self.id}: no text lines")
        for ln in self.lines:
            if not ln:
                raise ValueError(f"cue {self.id}: empty text line")
            if "\n" in ln or "\r" in ln:
                raise ValueError(f"cue {self.id}: line contains a newline")

    @property
    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms

    @property
    def text(self) -> str:
        return "\n".join(self.lines)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "start_ms": self.start_ms,
            "end_ms": self.end_ms,
            "lines": list(self.lines),
            "position": self.position.to_json() if self.position else None,
            "settings": self.settings,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Cue":
        pos = obj.get("position")
        return cls(
            id=obj["id"],
            start_ms=obj["start_ms"],
            end_ms=obj["end_ms"],
            lines=tuple(obj["lines"]),
            position=Region.from_json(pos) if pos else None,
            settings=obj.get("settings", ""),
        )


@dataclass(frozen=True)
class SubtitleDoc:
    format: SubtitleFormat
    header: str = ""
    cues: tuple[Cue, ...] = ()

    def __post_init__(self) -> None:
        ids = [c.id for c in self.cues]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cue ids")
        if self.format is SubtitleFormat.SRT and self.header:
            raise ValueError("SRT documents cannot carry a header")

    def cue_by_id(self, cue_id: int) -> Cue:
        for c in self.cues:
            if c.id == cue_id:
                return c
        raise KeyError(f"no cue with id {cue_id}")

    def to_json(self) -> dict:
        return {
            "format": self.format.value,
            "header": self.header,
            "cues": [c.to_json() for c in self.cues],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SubtitleDoc":
        return cls(
            format=SubtitleFormat(obj["format"]),
            header=obj.get("header", ""),
            cues=tuple(Cue.from_json(c) for c in obj["cues"]),
        )


@dataclass(frozen=True)
class CueTableRow:
    id: int
    start_ms: int
    end_ms: int
    text: str
    cpl_max: int
    cps: float


@dataclass(frozen=True)
class Finding:
    """Structural defect reported by :func:`validate`."""

    code: str
    cue_id: int
    message: str


# Validation threshold: cues shorter than this are suspicious.
MIN_CUE_MS = 100

_SRT_TIME = re.compile(r"^(\d{2,}):(\d{2}):(\d{2}),(\d{3})$")
_VTT_TIME = re.compile(r"^(?:(\d{2,}):)?(\d{2}):(\d{2})\.(\d{3})$")
_ARROW = re.compile(r"\s-->\s")
_PCT_SETTING = re.compile(r"^(line|position):(\d{1,3}(?:\.\d+)?)%$")


def format_srt_timecode(ms: int) -> str:
    if ms < 0:
        raise ValueError("negative timecode")
    if ms >= MAX_SRT_MS:
        raise ValueError(f"timecode {ms}ms exceeds the SRT two-digit hour field")
    h, rest = divmod(ms, 3_600_000)
    m, rest = divmod(rest, 60_000)
    s, milli = divmod(rest, 1000)
    return f"{h:02d}:{m:02d}:{s:02d},{milli:03d}"


def format_vtt_timecode(ms: int) -> str:
    if ms < 0:
        raise ValueError("negative timecode")
    h, rest = divmod(ms, 3_600_000)
    m, rest = divmod(rest, 60_000)
    s, milli = divmod(rest, 1000)
    return f"{h:02d}:{m:02d}:{s:02d}.{milli:03d}"


def parse_srt_timecode(token: str, line: int | None = None) -> int:
    m = _SRT_TIME.match(token)
    if not m:
        raise SubtitleParseError(f"bad SRT timecode {token!r}", line)
    h, mi, s, milli = (int(g) for g in m.groups())
    if mi >= 60 or s >= 60:
        raise SubtitleParseError(f"bad SRT timecode {token!r}: minutes/seconds out of range", line)
    return ((h * 60 + mi) * 60 + s) * 1000 + milli


def parse_vtt_timecode(token: str, line: int | None = None) -> int:
    m = _VTT_TIME.match(token)
    if not m:
        raise SubtitleParseError(f"bad VTT timecode {token!r}", line)
    h = int(m.group(1)) if m.group(1) is not None else 0
    mi, s, milli = int(m.group(2)), int(m.group(3)), int(m.group(4))
    if mi >= 60 or s >= 60:
        raise SubtitleParseError(f"bad VTT timecode {token!r}: minutes/seconds out of range", line)
    return ((h * 60 + mi) * 60 + s) * 1000 + milli


def _strip_bom(text: str) -> str:
    return text.lstrip("﻿")


def _blocks(text: str) -> Iterable[tuple[int, list[str]]]:
    """Yield (1-based line number of first line, lines) per blank-separated block."""
    current: list[str] = []
    start = 0
    for n, raw in enumerate(text.split("\n"), start=1):
        line = raw.rstrip("\r").rstrip()
        if not line:
            if current:
                yield start, current
                current = []
            continue
        if not current:
            start = n
        current.append(line)
    if current:
        yield start, current


def _finish_doc(fmt: SubtitleFormat, header: str, cues: list[Cue]) -> SubtitleDoc:
    cues.sort(key=lambda c: (c.start_ms, c.end_ms, c.id))
    renumbered = tuple(replace(c, id=i) for i, c in enumerate(cues, start=1))
    return SubtitleDoc(format=fmt, header=header, cues=renumbered)


def parse_srt(text: str) -> SubtitleDoc:
    """Parse SRT text into a document.

    File indices are discarded; cues come back sorted by start time and
    renumbered 1..n.  Overlaps and gaps are accepted here and reported by
    :func:`validate`.
    """
    text = _strip_bom(text)
    cues: list[Cue] = []
    for ordinal, (line_no, block) in enumerate(_blocks(text), start=1):
        lines = block
        offset = 0
        if re.fullmatch(r"\d+", lines[0]) and len(lines) > 1 and _ARROW.search(lines[1]):
            offset = 1
        timing = lines[offset] if offset < len(lines) else ""
        parts = _ARROW.split(timing)
        if len(parts) != 2:
            raise SubtitleParseError(f"expected 'start --> end' timing line, got {timing!r}",
                                     line_no + offset)
        start = parse_srt_timecode(parts[0].strip(), line_no + offset)
        end = parse_srt_timecode(parts[1].strip(), line_no + offset)
        if start >= end:
            raise SubtitleParseError(f"start >= end at cue {ordinal}", line_no + offset)
        text_lines = tuple(lines[offset + 1:])
        if not text_lines:
            raise SubtitleParseError(f"cue {ordinal} has no text", line_no)
        cues.append(Cue(id=ordinal, start_ms=start, end_ms=end, lines=text_lines))
    return _finish_doc(SubtitleFormat.SRT, "", cues)


def settings_to_region(settings: str) -> Optional[Region]:
    """Map line/position percentages from a VTT settings string to a Region.

    Only percentage values are interpreted; everything else stays opaque.
    The region gets the default caption band size; ``line`` anchors the top
    edge and ``position`` the horizontal center.
    """
    line_pct: float | None = None
    pos_pct: float | None = None
    for token in settings.split():
        m = _PCT_SETTING.match(token)
        if not m:
            continue
        value = min(100.0, float(m.group(2)))
        if m.group(1) == "line":
            line_pct = value
        else:
            pos_pct = value
    if line_pct is None and pos_pct is None:
        return None
    w, h = DEFAULT_REGION.w, DEFAULT_REGION.h
    y = DEFAULT_REGION.y if line_pct is None else min(line_pct / 100.0, 1.0 - h)
    if pos_pct is None:
        x = DEFAULT_REGION.x
    else:
        x = min(max(pos_pct / 100.0 - w / 2, 0.0), 1.0 - w)
    return Region(x=x, y=y, w=w, h=h)


def region_to_settings(region: Region, existing: str = "") -> str:
    """Merge a region back into a VTT settings string.

    Replaces any line/position tokens already present; other tokens are kept.
    """
    kept = [t for t in existing.split() if not _PCT_SETTING.match(t)]
    line_pct = round(region.y * 100)
    pos_pct = round((region.x + region.w / 2) * 100)
    return " ".join([f"line:{line_pct}%", f"position:{pos_pct}%"] + kept)


def parse_vtt(text: str) -> SubtitleDoc:
    """Parse WebVTT text into a document.

    NOTE/STYLE/REGION blocks are preserved verbatim in ``header``; cue
    settings are stored opaquely, with line/position percentages also
    mapped onto the cue's position hint.
    """
    text = _strip_bom(text)
    block_iter = list(_blocks(text))
    if not block_iter or not block_iter[0][1][0].startswith("WEBVTT"):
        raise SubtitleParseError("missing WEBVTT magic", 1)

    header_parts: list[str] = []
    first_block = block_iter[0][1]
    if len(first_block) > 1 and not any(_ARROW.search(l) for l in first_block[1:]):
        # Text folded into the WEBVTT block (rare); keep it in the header.
        header_parts.append("\n".join(first_block[1:]))
        first_block = first_block[:1]
    blocks = block_iter[1:]
    if len(first_block) > 1:
        # The WEBVTT block itself contains a timing line: split the cue off.
        blocks = [(block_iter[0][0] + 1, first_block[1:])] + blocks

    cues: list[Cue] = []
    ordinal = 0
    for line_no, block in blocks:
        if block[0].split()[0].split(":")[0] in ("NOTE", "STYLE", "REGION"):
            header_parts.append("\n".join(block))
            continue
        offset = 0
        if not _ARROW.search(block[0]):
            offset = 1  # cue identifier line (discarded, like SRT indices)
        if offset >= len(block) or not _ARROW.search(block[offset]):
            raise SubtitleParseError(f"expected a timing line, got {block[0]!r}", line_no)
        ordinal += 1
        timing = block[offset]
        left, right = _ARROW.split(timing, maxsplit=1)
        start = parse_vtt_timecode(left.strip(), line_no + offset)
        right_parts = right.strip().split(None, 1)
        end = parse_vtt_timecode(right_parts[0], line_no + offset)
        settings = right_parts[1].strip() if len(right_parts) > 1 else ""
        if start >= end:
            raise SubtitleParseError(f"start >= end at cue {ordinal}", line_no + offset)
        text_lines = tuple(block[offset + 1:])
        if not text_lines:
            raise SubtitleParseError(f"cue {ordinal} has no text", line_no)
        cues.append(Cue(id=ordinal, start_ms=start, end_ms=end, lines=text_lines,
                        position=settings_to_region(settings), settings=settings))
    return _finish_doc(SubtitleFormat.VTT, "\n\n".join(header_parts), cues)


def parse(text: str, fmt: SubtitleFormat) -> SubtitleDoc:
    return parse_srt(text) if fmt is SubtitleFormat.SRT else parse_vtt(text)


def serialize_srt(doc: SubtitleDoc) -> str:
    """Serialize cues as SRT, renumbering indices 1..n. Header is dropped."""
    blocks = []
    for i, cue in enumerate(doc.cues, start=1):
        timing = f"{format_srt_timecode(cue.start_ms)} --> {format_srt_timecode(cue.end_ms)}"
        blocks.append(f"{i}\n{timing}\n" + "\n".join(cue.lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def serialize_vtt(doc: SubtitleDoc) -> str:
    parts = ["WEBVTT"]
    if doc.header:
        parts.append(doc.header)
    for cue in doc.cues:
        settings = cue.settings
        if cue.position is not None and not settings:
            settings = region_to_settings(cue.position)
        timing = f"{format_vtt_timecode(cue.start_ms)} --> {format_vtt_timecode(cue.end_ms)}"
        if settings:
            timing += f" {settings}"
        parts.append(timing + "\n" + "\n".join(cue.lines))
    return "\n\n".join(parts) + "\n"


def serialize(doc: SubtitleDoc, fmt: SubtitleFormat | None = None) -> str:
    fmt = fmt or doc.format
    return serialize_srt(doc) if fmt is SubtitleFormat.SRT else serialize_vtt(doc)


def to_table(doc: SubtitleDoc) -> list[CueTableRow]:
    """One row per cue with CPL/CPS readability figures.

    Newlines inside cue text are escaped as a literal two-character ``\\n``.
    """
    rows = []
    for cue in doc.cues:
        chars = sum(len(l) for l in cue.lines)
        cps = chars / (cue.duration_ms / 1000.0)
        rows.append(CueTableRow(
            id=cue.id,
            start_ms=cue.start_ms,
            end_ms=cue.end_ms,
            text="\\n".join(cue.lines),
            cpl_max=max(len(l) for l in cue.lines),
            cps=cps,
        ))
    return rows


def write_table_csv(rows: Sequence[CueTableRow], fp) -> None:
    writer = csv.writer(fp, lineterminator="\n")
    writer.writerow(["id", "start_ms", "end_ms", "text", "cpl_max", "cps"])
    for r in rows:
        writer.writerow([r.id, r.start_ms, r.end_ms, r.text, r.cpl_max, f"{r.cps:.6g}"])


def table_csv(doc: SubtitleDoc) -> str:
    buf = io.StringIO()
    write_table_csv(to_table(doc), buf)
    return buf.getvalue()


def validate(doc: SubtitleDoc, duration_ms: int | None = None) -> list[Finding]:
    """Report structural problems without mutating anything."""
    findings: list[Finding] = []
    prev: Cue | None = None
    for cue in doc.cues:
        if cue.duration_ms == 0:
            findings.append(Finding("zero_length", cue.id, "cue has zero duration"))
        elif cue.duration_ms < MIN_CUE_MS:
            findings.append(Finding(
                "too_short", cue.id, f"cue lasts {cue.duration_ms}ms (< {MIN_CUE_MS}ms)"))
        if prev is not None:
            if cue.start_ms < prev.start_ms:
                findings.append(Finding(
                    "out_of_order", cue.id, f"cue {cue.id} starts before cue {prev.id}"))
            elif cue.start_ms < prev.end_ms:
                findings.append(Finding(
                    "overlap", cue.id, f"cue {cue.id} overlaps cue {prev.id}"))
        if duration_ms is not None and cue.end_ms > duration_ms:
            findings.append(Finding(
                "beyond_media", cue.id,
                f"cue ends at {cue.end_ms}ms but media lasts {duration_ms}ms"))
        prev = cue
    return findings
