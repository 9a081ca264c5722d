/** View models: reshape API payloads for display without changing values. */
export const LANGUAGE_KINDS = [
    "contextual_spelling",
    "harmful_word",
    "time_sync",
    "non_word",
    "segmentation",
];
export const IMAGE_KINDS = ["positioning", "font_color"];
export const ALL_KINDS = [...LANGUAGE_KINDS, ...IMAGE_KINDS];
export const KIND_LABELS = {
    contextual_spelling: "Contextual spelling",
    harmful_word: "Harmful words",
    time_sync: "Time sync",
    non_word: "Non-word audio",
    segmentation: "Segmentation",
    positioning: "Positioning",
    font_color: "Font color",
};
/** Kinds whose decisions may carry an edited text payload. */
export const TEXT_EDITABLE_KINDS = new Set([
    "contextual_spelling",
    "harmful_word",
    "time_sync",
    "non_word",
]);
export function tabOf(kind) {
    return IMAGE_KINDS.includes(kind) ? "image" : "language";
}
export function renderStateOf(issue) {
    if (!issue.decision)
        return "pending";
    if (issue.decision.action === "accept")
        return "accepted";
    if (issue.decision.action === "reject")
        return "rejected";
    return "edited";
}
export function formatTimecode(ms) {
    const h = Math.floor(ms / 3600000);
    const m = Math.floor((ms % 3600000) / 60000);
    const s = Math.floor((ms % 60000) / 1000);
    const milli = ms % 1000;
    const pad = (n, w) => String(n).padStart(w, "0");
    return `${pad(h, 2)}:${pad(m, 2)}:${pad(s, 2)}.${pad(milli, 3)}`;
}
export function cueTiming(cue) {
    return `${formatTimecode(cue.start_ms)} → ${formatTimecode(cue.end_ms)}`;
}
/** Human-readable preview of a suggestion; all values come from the API. */
export function suggestionPreview(issue) {
    const s = issue.suggestion;
    if (!s)
        return "(no automatic suggestion)";
    switch (s.type) {
        case "replace_text":
            return s.lines.join("\n");
        case "mask_spans": {
            const preview = issue.evidence["masked_preview"];
            return typeof preview === "string"
                ? preview
                : `mask spans ${JSON.stringify(s.spans)}`;
        }
        case "append_tag":
            return `${(issue.cue?.lines ?? []).join("\n")}\n[${s.label}]`;
        case "split_cue":
            return s.cues
                .map((c) => `${cueTiming(c)}  ${c.lines.join(" / ")}`)
                .join("\n");
        case "move_region":
            return `move caption to x=${s.region.x.toFixed(2)} y=${s.region.y.toFixed(2)}`;
        case "set_color":
            return `render font in ${s.color}`;
    }
}
/** Candidate regions for the frame overlay (positioning evidence only). */
export function candidateRegions(issue) {
    const raw = issue.evidence["candidates"];
    if (!Array.isArray(raw))
        return [];
    const out = [];
    for (const entry of raw) {
        if (entry &&
            typeof entry === "object" &&
            typeof entry.name === "string" &&
            typeof entry.score === "number") {
            const e = entry;
            out.push({ name: e.name, region: e.region, score: e.score });
        }
    }
    return out;
}
/** Evidence as displayable key/value rows, values verbatim (JSON for nested). */
export function evidenceRows(issue) {
    return Object.entries(issue.evidence).map(([key, value]) => [
        key,
        typeof value === "string" ? value : JSON.stringify(value),
    ]);
}
export function buildViewModel(issue) {
    const chosen = issue.evidence["chosen"];
    return {
        issueId: issue.issue_id,
        cueId: issue.cue_id,
        kind: issue.kind,
        kindLabel: KIND_LABELS[issue.kind] ?? issue.kind,
        tab: tabOf(issue.kind),
        renderState: renderStateOf(issue),
        timing: issue.cue ? cueTiming(issue.cue) : "(cue unavailable)",
        originalText: (issue.cue?.lines ?? []).join("\n"),
        suggestedText: suggestionPreview(issue),
        textEditable: TEXT_EDITABLE_KINDS.has(issue.kind),
        evidence: evidenceRows(issue),
        audioUrl: issue.asset_urls.audio,
        frameUrl: issue.asset_urls.frame,
        candidates: candidateRegions(issue),
        chosenName: typeof chosen === "string" ? chosen : null,
        suggestion: issue.suggestion,
    };
}
export function countByKind(issues) {
    const counts = new Map();
    for (const kind of ALL_KINDS)
        counts.set(kind, 0);
    for (const issue of issues) {
        counts.set(issue.kind, (counts.get(issue.kind) ?? 0) + 1);
    }
    return counts;
}
