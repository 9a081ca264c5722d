"""Image-mode detectors: subtitle placement via saliency overlap, and font
color via background brightness.

The saliency map is computed with the spectral-residual method on a 64x64
grayscale working image: the log-amplitude spectrum minus its 3x3 box
blur, inverted with the original phase, squared, smoothed, and normalized
so the map's mass sums to 1.  An overlap score is then the fraction of
that mass under a candidate caption region.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .issues import Issue, IssueKind, MoveRegion, SetColor, Skip, make_issue_id, sort_issues
from .media_ingest import Frame
from .subtitle_core import DEFAULT_REGION, Cue, Region, SubtitleDoc

SALIENCY_SIZE = 64
OVERLAP_THRESHOLD = 0.006
BRIGHTNESS_THRESHOLD = 128.0
DEFAULT_FONT_COLOR = "white"

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(eq=False)
class SaliencyMap:
    """Mass-normalized saliency grid; values are >= 0 and sum to 1."""

    values: np.ndarray  # (height, width) float64

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("saliency map must be 2-D")
        if (self.values < 0).any():
            raise ValueError("saliency values must be non-negative")
        if abs(float(self.values.sum()) - 1.0) > 1e-9:
            raise ValueError(f"saliency mass is {self.values.sum()}, expected 1")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def frame_to_array(frame: Frame) -> np.ndarray:
    return np.frombuffer(frame.pixels, dtype=np.uint8).reshape(
        frame.height, frame.width, 3)


def luma(rgb: np.ndarray) -> np.ndarray:
    r, g, b = LUMA_WEIGHTS
    return r * rgb[..., 0] + g * rgb[..., 1] + b * rgb[..., 2]


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling at pixel centers (source x = (j+0.5)*W/out - 0.5)."""
    in_h, in_w = img.shape
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    ys = np.clip(ys, 0, in_h - 1)
    xs = np.clip(xs, 0, in_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bottom = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bottom * wy


def box3(img: np.ndarray) -> np.ndarray:
    """3x3 box filter with edge-replicate padding."""
    padded = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + img.shape[0], dx:dx + img.shape[1]]
    return out / 9.0


def uniform_map(size: int = SALIENCY_SIZE) -> SaliencyMap:
    return SaliencyMap(values=np.full((size, size), 1.0 / (size * size)))


def saliency_spectral_residual(frame: Frame, size: int = SALIENCY_SIZE) -> SaliencyMap:
    gray = luma(frame_to_array(frame).astype(np.float64))
    small = bilinear_resize(gray, size, size)
    if small.max() - small.min() < 1e-12:
        return uniform_map(size)
    spectrum = np.fft.fft2(small)
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    # Relative floor keeps log() bounded at the spectrum's exact zeros
    # (synthetic frames hit them; natural frames never do).
    log_amp = np.log(amplitude + 1e-4 * amplitude.max())
    residual = log_amp - box3(log_amp)
    sal = np.abs(np.fft.ifft2(np.exp(residual + 1j * phase))) ** 2
    sal = box3(box3(sal))
    total = sal.sum()
    if total <= 0:
        return uniform_map(size)
    return SaliencyMap(values=sal / total)


def _cells_in_region(n_rows: int, n_cols: int, region: Region):
    """Index mask of cells whose centers fall inside the half-open region."""
    cy = (np.arange(n_rows) + 0.5) / n_rows
    cx = (np.arange(n_cols) + 0.5) / n_cols
    rows = (cy >= region.y) & (cy < region.y + region.h)
    cols = (cx >= region.x) & (cx < region.x + region.w)
    return rows[:, None] & cols[None, :]


def overlap_score(smap: SaliencyMap, region: Region) -> float:
    """Fraction of total saliency mass under the region (cell-center rule)."""
    mask = _cells_in_region(smap.height, smap.width, region)
    return float(smap.values[mask].sum())


def candidate_ladder(base: Region = DEFAULT_REGION) -> list[tuple[str, Region]]:
    """Fixed alternatives sharing the base region's size; ladder order breaks ties."""
    w, h = base.w, base.h
    cx = (1.0 - w) / 2
    bottom_y = 0.95 - h
    return [
        ("bottom_center", Region(cx, bottom_y, w, h)),
        ("middle_center", Region(cx, (1.0 - h) / 2, w, h)),
        ("top_center", Region(cx, 0.05, w, h)),
        ("bottom_left", Region(0.0, bottom_y, w, h)),
        ("bottom_right", Region(1.0 - w, bottom_y, w, h)),
    ]


@dataclass(frozen=True)
class PlacementResult:
    chosen: Region
    chosen_name: str
    scores: dict[str, float]
    flagged: bool


def place_subtitle(smap: SaliencyMap, default_region: Region = DEFAULT_REGION,
                   threshold: float = OVERLAP_THRESHOLD) -> PlacementResult:
    ladder = candidate_ladder(default_region)
    scores = {"default": overlap_score(smap, default_region)}
    for name, region in ladder:
        scores[name] = overlap_score(smap, region)
    chosen_name, chosen = min(ladder, key=lambda item: scores[item[0]])
    return PlacementResult(chosen=chosen, chosen_name=chosen_name, scores=scores,
                           flagged=scores["default"] > threshold)


def detect_positioning(frame: Frame, default_region: Region = DEFAULT_REGION,
                       threshold: float = OVERLAP_THRESHOLD,
                       smap: Optional[SaliencyMap] = None) -> Optional[Issue]:
    smap = smap or saliency_spectral_residual(frame)
    placement = place_subtitle(smap, default_region, threshold)
    if not placement.flagged:
        return None
    # Candidate coordinates ship in the evidence so review UIs can draw the
    # overlay without re-deriving the ladder.
    candidates = [{"name": name, "region": region.to_json(),
                   "score": placement.scores[name]}
                  for name, region in candidate_ladder(default_region)]
    return Issue(
        issue_id=make_issue_id(frame.cue_id, IssueKind.POSITIONING),
        cue_id=frame.cue_id,
        kind=IssueKind.POSITIONING,
        evidence={
            "scores": {k: v for k, v in sorted(placement.scores.items())},
            "candidates": candidates,
            "threshold": threshold,
            "default_region": default_region.to_json(),
            "chosen": placement.chosen_name,
        },
        suggestion=MoveRegion(region=placement.chosen),
    )


def average_brightness(frame: Frame, region: Region) -> float:
    """Mean luma over full-resolution pixels whose centers fall in the region."""
    rgb = frame_to_array(frame).astype(np.float64)
    mask = _cells_in_region(frame.height, frame.width, region)
    if not mask.any():
        # Region thinner than one pixel: use the nearest pixel.
        y = min(int((region.y + region.h / 2) * frame.height), frame.height - 1)
        x = min(int((region.x + region.w / 2) * frame.width), frame.width - 1)
        mask = np.zeros((frame.height, frame.width), dtype=bool)
        mask[y, x] = True
    return float(luma(rgb)[mask].mean())


def choose_font_color(frame: Frame, region: Region,
                      threshold: float = BRIGHTNESS_THRESHOLD) -> str:
    """Black on bright backgrounds (strictly above threshold), else white."""
    return "black" if average_brightness(frame, region) > threshold else "white"


def detect_font_color(frame: Frame, region: Region,
                      current_color: str = DEFAULT_FONT_COLOR,
                      threshold: float = BRIGHTNESS_THRESHOLD) -> Optional[Issue]:
    brightness = average_brightness(frame, region)
    color = "black" if brightness > threshold else "white"
    if color == current_color:
        return None
    return Issue(
        issue_id=make_issue_id(frame.cue_id, IssueKind.FONT_COLOR),
        cue_id=frame.cue_id,
        kind=IssueKind.FONT_COLOR,
        evidence={"brightness": brightness, "threshold": threshold,
                  "region": region.to_json(), "current_color": current_color},
        suggestion=SetColor(color=color),
    )


@dataclass(frozen=True)
class ImageOptions:
    positioning: bool = True
    font_color: bool = True
    overlap_threshold: float = OVERLAP_THRESHOLD
    brightness_threshold: float = BRIGHTNESS_THRESHOLD
    default_region: Region = DEFAULT_REGION
    current_font_color: str = DEFAULT_FONT_COLOR


def run_image_pass(doc: SubtitleDoc, frames: Mapping[int, Frame],
                   options: ImageOptions = ImageOptions()) -> tuple[list[Issue], list[Skip]]:
    """At most one positioning and one font-color issue per cue.

    Font color is judged at the post-move region when a move is suggested,
    so both fixes can be accepted together.
    """
    issues: list[Issue] = []
    skips: list[Skip] = []
    enabled = [d for d, on in (("positioning", options.positioning),
                               ("font_color", options.font_color)) if on]
    for cue in doc.cues:
        frame = frames.get(cue.id)
        if frame is None:
            skips.extend(Skip(cue.id, d, "no frame") for d in enabled)
            continue
        base_region = cue.position or options.default_region
        color_region = base_region
        if options.positioning:
            issue = detect_positioning(frame, base_region, options.overlap_threshold)
            if issue is not None:
                issues.append(issue)
                color_region = issue.suggestion.region
        if options.font_color:
            issue = detect_font_color(frame, color_region, options.current_font_color,
                                      options.brightness_threshold)
            if issue is not None:
                issues.append(issue)
    return sort_issues(issues), skips
