/** Frame overlay: scale normalized regions onto a thumbnail canvas. */

import type { Region } from "./api.js";
import type { CandidateRegion } from "./model.js";

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

export function regionToRect(region: Region, width: number, height: number): Rect {
  return {
    x: Math.round(region.x * width),
    y: Math.round(region.y * height),
    w: Math.max(1, Math.round(region.w * width)),
    h: Math.max(1, Math.round(region.h * height)),
  };
}

export const CHOSEN_COLOR = "#27ae60";
export const CANDIDATE_COLOR = "#f39c12";
export const DEFAULT_COLOR = "#e74c3c";

interface StrokeTarget {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

/** Draw candidate rectangles; the chosen one gets the highlight color. */
export function drawCandidates(
  ctx: StrokeTarget,
  candidates: CandidateRegion[],
  chosenName: string | null,
  width: number,
  height: number,
  defaultRegion?: Region | null,
): void {
  if (defaultRegion) {
    const rect = regionToRect(defaultRegion, width, height);
    ctx.strokeStyle = DEFAULT_COLOR;
    ctx.lineWidth = 1;
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
  }
  for (const candidate of candidates) {
    const rect = regionToRect(candidate.region, width, height);
    const isChosen = candidate.name === chosenName;
    ctx.strokeStyle = isChosen ? CHOSEN_COLOR : CANDIDATE_COLOR;
    ctx.lineWidth = isChosen ? 3 : 1;
    ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
    ctx.font = "10px sans-serif";
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(
      `${candidate.name} ${candidate.score.toFixed(4)}`,
      rect.x + 2,
      Math.max(10, rect.y - 2),
    );
  }
}
