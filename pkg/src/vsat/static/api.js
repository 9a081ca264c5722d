/** Typed client for the review service's /api/v1 endpoints.
 *
 * The UI holds no business logic: everything rendered comes out of these
 * response payloads verbatim.
 */
export class ApiError extends Error {
    constructor(status, code, message, details = {}) {
        super(message);
        this.status = status;
        this.code = code;
        this.details = details;
    }
}
async function parseError(resp) {
    let code = "http_error";
    let message = `${resp.status} ${resp.statusText}`;
    let details = {};
    try {
        const body = await resp.json();
        if (typeof body.code === "string")
            code = body.code;
        if (typeof body.message === "string")
            message = body.message;
        if (body.details && typeof body.details === "object")
            details = body.details;
        // FastAPI request-validation errors arrive as {detail: [...]}.
        if (body.detail)
            message = JSON.stringify(body.detail);
    }
    catch {
        /* non-JSON error body; keep the status text */
    }
    throw new ApiError(resp.status, code, message, details);
}
export class ApiClient {
    constructor(baseUrl = "") {
        this.baseUrl = baseUrl;
    }
    async request(path, init) {
        const resp = await fetch(this.baseUrl + path, init);
        if (!resp.ok)
            await parseError(resp);
        return (await resp.json());
    }
    post(path, body) {
        return this.request(path, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify(body),
        });
    }
    healthz() {
        return this.request("/healthz");
    }
    createProject(body) {
        return this.post("/api/v1/projects", body);
    }
    getProject(projectId) {
        return this.request(`/api/v1/projects/${projectId}`);
    }
    getCues(projectId) {
        return this.request(`/api/v1/projects/${projectId}/cues`);
    }
    getIssues(projectId, filter) {
        const params = new URLSearchParams();
        if (filter?.kind)
            params.set("kind", filter.kind);
        if (filter?.cue !== undefined)
            params.set("cue", String(filter.cue));
        const qs = params.toString();
        return this.request(`/api/v1/projects/${projectId}/issues${qs ? "?" + qs : ""}`);
    }
    decide(projectId, issueId, action, payload) {
        return this.post(`/api/v1/projects/${projectId}/issues/${issueId}/decision`, {
            action,
            payload: payload ?? null,
        });
    }
    manualEdit(projectId, cueId, lines) {
        return this.post(`/api/v1/projects/${projectId}/cues/${cueId}/edit`, { lines });
    }
    exportProject(projectId, format) {
        const qs = format ? `?format=${encodeURIComponent(format)}` : "";
        return this.post(`/api/v1/projects/${projectId}/export${qs}`, {});
    }
    assetUrl(relative) {
        return this.baseUrl + relative;
    }
}
