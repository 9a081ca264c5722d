/** Application shell: upload, tabbed issue review, manual edits, export.
 *
 * Rendering is plain DOM; all state shown to the user is refetched from or
 * returned by the API, never computed here.
 */
import { ApiError } from "./api.js";
import { IMAGE_KINDS, KIND_LABELS, LANGUAGE_KINDS, buildViewModel, countByKind, } from "./model.js";
import { drawCandidates } from "./overlay.js";
function el(tag, attrs = {}, ...children) {
    const node = document.createElement(tag);
    for (const [key, value] of Object.entries(attrs)) {
        if (key === "class")
            node.className = value;
        else
            node.setAttribute(key, value);
    }
    node.append(...children);
    return node;
}
function browserDownload(filename, text) {
    const blob = new Blob([text], { type: "text/plain;charset=utf-8" });
    const url = URL.createObjectURL(blob);
    const anchor = document.createElement("a");
    anchor.href = url;
    anchor.download = filename;
    document.body.append(anchor);
    anchor.click();
    anchor.remove();
    URL.revokeObjectURL(url);
}
export class App {
    constructor(root, api, options = {}) {
        this.root = root;
        this.api = api;
        this.projectId = null;
        this.issues = [];
        this.cues = [];
        this.activeTab = "language";
        this.activeKind = LANGUAGE_KINDS[0];
        this.lastDownload = null;
        this.download = options.download ?? browserDownload;
    }
    // ------------------------------------------------------------------ upload
    start() {
        this.renderUpload();
    }
    renderUpload(errorMessage = "") {
        this.root.replaceChildren(el("section", { class: "upload-view" }, el("h1", {}, "Subtitle review"), el("p", { class: "hint" }, "Pick the raw video reference, the subtitle file (.srt/.vtt), and the " +
            "issue report produced by the checker."), this.uploadForm(), el("div", { class: "error-panel", id: "upload-error" }, errorMessage)));
    }
    uploadForm() {
        const form = el("form", { class: "upload-form", id: "upload-form" });
        const subtitleInput = el("input", { type: "file", id: "subtitle-file" });
        const reportInput = el("input", { type: "file", id: "report-file" });
        const videoInput = el("input", {
            type: "text",
            id: "video-ref",
            placeholder: "video file or URL (passed through)",
        });
        const assetsInput = el("input", {
            type: "text",
            id: "assets-dir",
            placeholder: "asset directory on the server (optional)",
        });
        form.append(el("label", {}, "Subtitle file ", subtitleInput), el("label", {}, "Issue report (report.json) ", reportInput), el("label", {}, "Video reference ", videoInput), el("label", {}, "Assets directory ", assetsInput), el("button", { type: "submit", id: "upload-submit" }, "Create project"));
        form.addEventListener("submit", (event) => {
            event.preventDefault();
            void this.submitUpload({
                subtitleFile: subtitleInput.files?.[0] ?? null,
                reportFile: reportInput.files?.[0] ?? null,
                videoRef: videoInput.value,
                assetsDir: assetsInput.value,
            });
        });
        return form;
    }
    async submitUpload(fields) {
        if (!fields.subtitleFile || !fields.reportFile) {
            this.setUploadError("Choose both a subtitle file and a report file.");
            return;
        }
        try {
            const subtitleText = await fields.subtitleFile.text();
            const report = JSON.parse(await fields.reportFile.text());
            const created = await this.api.createProject({
                video_ref: fields.videoRef,
                subtitle_name: fields.subtitleFile.name,
                subtitle_text: subtitleText,
                report,
                assets_dir: fields.assetsDir || null,
            });
            await this.openProject(created.project_id);
        }
        catch (error) {
            this.setUploadError(describeError(error));
        }
    }
    setUploadError(message) {
        const panel = this.root.querySelector("#upload-error");
        if (panel)
            panel.textContent = message;
        else
            this.renderUpload(message);
    }
    // ------------------------------------------------------------------ review
    async openProject(projectId) {
        this.projectId = projectId;
        await this.refresh();
    }
    async refresh() {
        if (!this.projectId)
            return;
        const [issuePage, cueList] = await Promise.all([
            this.api.getIssues(this.projectId),
            this.api.getCues(this.projectId),
        ]);
        this.issues = issuePage.items;
        this.cues = cueList.cues;
        this.renderReview();
    }
    renderReview() {
        const counts = countByKind(this.issues);
        const header = el("header", { class: "review-header" }, el("h1", {}, `Project ${this.projectId ?? ""}`), el("span", { class: "summary", id: "summary" }, `${this.issues.length} issue(s), ${this.cues.length} cue(s)`), this.actionButton("refresh", "Refresh", () => void this.refresh()), this.actionButton("export-srt", "Download .srt", () => void this.exportNow("srt")), this.actionButton("export-vtt", "Download .vtt", () => void this.exportNow("vtt")), this.actionButton("export-native", "Download (original format)", () => void this.exportNow()));
        const tabs = el("nav", { class: "tabs" });
        for (const tab of ["language", "image"]) {
            const kinds = tab === "language" ? LANGUAGE_KINDS : IMAGE_KINDS;
            const total = kinds.reduce((acc, k) => acc + (counts.get(k) ?? 0), 0);
            const button = el("button", {
                class: `tab ${this.activeTab === tab ? "active" : ""}`,
                id: `tab-${tab}`,
            }, `${tab === "language" ? "Language issues" : "Image issues"} (${total})`);
            button.addEventListener("click", () => {
                this.activeTab = tab;
                this.activeKind = (tab === "language" ? LANGUAGE_KINDS : IMAGE_KINDS)[0];
                this.renderReview();
            });
            tabs.append(button);
        }
        const kindSelect = el("select", { id: "kind-select" });
        const kinds = this.activeTab === "language" ? LANGUAGE_KINDS : IMAGE_KINDS;
        for (const kind of kinds) {
            const option = el("option", { value: kind }, `${KIND_LABELS[kind]} (${counts.get(kind) ?? 0})`);
            option.selected = kind === this.activeKind;
            kindSelect.append(option);
        }
        kindSelect.addEventListener("change", () => {
            this.activeKind = kindSelect.value;
            this.renderReview();
        });
        const list = el("section", { class: "issue-list", id: "issue-list" });
        const selected = this.issues.filter((issue) => issue.kind === this.activeKind);
        if (selected.length === 0) {
            list.append(el("div", { class: "placeholder", id: "no-issues" }, `No ${KIND_LABELS[this.activeKind] ?? this.activeKind} issues. `, el("span", {}, "Every cue can still be edited manually below.")));
        }
        else {
            for (const issue of selected) {
                list.append(this.issueCard(buildViewModel(issue)));
            }
        }
        this.root.replaceChildren(header, tabs, el("div", { class: "filter-row" }, el("label", {}, "Issue type ", kindSelect)), list, this.cuePanel(), el("div", { class: "toast", id: "toast" }));
    }
    actionButton(id, label, onClick) {
        const button = el("button", { id, class: "action" }, label);
        button.addEventListener("click", onClick);
        return button;
    }
    issueCard(vm) {
        const card = el("article", {
            class: `issue-card state-${vm.renderState}`,
            "data-issue-id": vm.issueId,
            "data-state": vm.renderState,
        });
        card.append(el("div", { class: "issue-head" }, el("strong", {}, `${vm.kindLabel} — cue ${vm.cueId}`), el("span", { class: "timing" }, vm.timing), el("span", { class: `state-badge ${vm.renderState}` }, vm.renderState)));
        const original = el("div", { class: "pane original" }, el("h3", {}, "Original"), el("pre", { class: "cue-text" }, vm.originalText));
        const suggested = el("div", { class: "pane suggested" }, el("h3", {}, "Suggested"), el("pre", { class: "suggestion-text" }, vm.suggestedText));
        card.append(el("div", { class: "side-by-side" }, original, suggested));
        const evidence = el("table", { class: "evidence" });
        for (const [key, value] of vm.evidence) {
            evidence.append(el("tr", {}, el("th", {}, key), el("td", { "data-evidence": key }, value)));
        }
        card.append(el("details", {}, el("summary", {}, "Evidence"), evidence));
        const audio = el("audio", {
            controls: "controls",
            preload: "none",
            src: this.api.assetUrl(vm.audioUrl),
        });
        card.append(el("div", { class: "media-row" }, audio));
        if (vm.tab === "image") {
            card.append(this.frameOverlay(vm));
        }
        card.append(this.controls(vm));
        return card;
    }
    frameOverlay(vm) {
        const width = 320;
        const height = 180;
        const canvas = el("canvas", {
            width: String(width),
            height: String(height),
            class: "frame-canvas",
        });
        const image = new Image();
        image.onload = () => {
            const ctx = canvas.getContext("2d");
            if (!ctx)
                return; // test environments without canvas rasterization
            ctx.drawImage(image, 0, 0, width, height);
            drawCandidates(ctx, vm.candidates, vm.chosenName, width, height);
        };
        image.src = this.api.assetUrl(vm.frameUrl);
        return el("div", { class: "media-row frame" }, canvas);
    }
    controls(vm) {
        const row = el("div", { class: "controls" });
        const accept = el("button", { class: "accept", "data-action": "accept" }, "Accept");
        accept.addEventListener("click", () => void this.decideIssue(vm.issueId, "accept"));
        const reject = el("button", { class: "reject", "data-action": "reject" }, "Reject");
        reject.addEventListener("click", () => void this.decideIssue(vm.issueId, "reject"));
        row.append(accept, reject);
        if (vm.textEditable) {
            const textarea = el("textarea", { class: "edit-text" });
            textarea.value = vm.suggestion?.type === "replace_text"
                ? vm.suggestion.lines.join("\n")
                : vm.originalText;
            const editButton = el("button", { class: "edit", "data-action": "edit" }, "Apply my edit");
            editButton.addEventListener("click", () => void this.decideIssue(vm.issueId, "edit", {
                lines: textarea.value.split("\n").filter((line) => line.length > 0),
            }));
            row.append(textarea, editButton);
        }
        return row;
    }
    async decideIssue(issueId, action, payload) {
        if (!this.projectId)
            return;
        try {
            const updated = await this.api.decide(this.projectId, issueId, action, payload);
            // Server state wins; splits can renumber cues, so refetch everything.
            const isSplit = updated.issue.suggestion?.type === "split_cue" && action === "accept";
            if (isSplit) {
                await this.refresh();
            }
            else {
                this.issues = this.issues.map((issue) => issue.issue_id === issueId ? updated.issue : issue);
                this.renderReview();
            }
        }
        catch (error) {
            if (error instanceof ApiError && error.status === 409) {
                this.toast(`Stale issue: ${error.message}; refreshing`);
                await this.refresh();
            }
            else {
                this.toast(describeError(error));
            }
        }
    }
    // ------------------------------------------------------------- manual edit
    cuePanel() {
        const panel = el("section", { class: "cue-panel", id: "cue-panel" });
        panel.append(el("h2", {}, "All cues"), el("p", { class: "hint" }, "Manual edits are allowed on every cue, issue or not."));
        for (const cue of this.cues) {
            const textarea = el("textarea", {
                class: "cue-edit",
                "data-cue-id": String(cue.id),
            });
            textarea.value = cue.lines.join("\n");
            const save = el("button", { class: "save-cue", "data-cue-id": String(cue.id) }, "Save");
            save.addEventListener("click", () => void this.manualEditCue(cue.id, textarea.value.split("\n").filter((line) => line.length > 0)));
            panel.append(el("div", { class: "cue-row", id: `cue-${cue.id}` }, el("span", { class: "cue-id" }, `#${cue.id}`), el("span", { class: "timing" }, `${cue.start_ms}–${cue.end_ms}ms`), textarea, save));
        }
        return panel;
    }
    async manualEditCue(cueId, lines) {
        if (!this.projectId)
            return;
        try {
            const updated = await this.api.manualEdit(this.projectId, cueId, lines);
            this.cues = this.cues.map((cue) => (cue.id === cueId ? updated.cue : cue));
            this.renderReview();
            this.toast(`Cue ${cueId} updated`);
        }
        catch (error) {
            this.toast(describeError(error));
        }
    }
    // ------------------------------------------------------------------ export
    async exportNow(format) {
        if (!this.projectId)
            return;
        try {
            const result = await this.api.exportProject(this.projectId, format);
            this.lastDownload = { filename: result.filename, text: result.subtitle };
            this.download(result.filename, result.subtitle);
            this.toast(`Exported ${result.filename}`);
        }
        catch (error) {
            this.toast(describeError(error));
        }
    }
    toast(message) {
        const toast = this.root.querySelector("#toast");
        if (toast)
            toast.textContent = message;
    }
}
export function describeError(error) {
    if (error instanceof ApiError) {
        return `${error.code}: ${error.message}`;
    }
    return error instanceof Error ? error.message : String(error);
}
