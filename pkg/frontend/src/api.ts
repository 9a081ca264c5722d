/** Typed client for the review service's /api/v1 endpoints.
 *
 * The UI holds no business logic: everything rendered comes out of these
 * response payloads verbatim.
 */

export interface Region {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface ApiCue {
  id: number;
  start_ms: number;
  end_ms: number;
  lines: string[];
  position: Region | null;
  settings: string;
}

export type Suggestion =
  | { type: "replace_text"; lines: string[] }
  | { type: "mask_spans"; spans: [number, number][] }
  | { type: "append_tag"; label: string }
  | { type: "split_cue"; cues: ApiCue[] }
  | { type: "move_region"; region: Region }
  | { type: "set_color"; color: "black" | "white" };

export interface ApiDecision {
  action: "accept" | "reject" | "edit";
  payload: Record<string, unknown> | null;
  decided_at: number;
  actor: string;
}

export interface ApiIssue {
  issue_id: string;
  cue_id: number;
  kind: string;
  evidence: Record<string, unknown>;
  suggestion: Suggestion | null;
  decision: ApiDecision | null;
  cue: ApiCue | null;
  asset_urls: { audio: string; frame: string };
}

export interface ProjectSummary {
  project_id: string;
  status: string;
  format: string;
  video_ref: string;
  subtitle_name: string;
  cue_count: number;
  issue_count: number;
  decided_count: number;
  has_assets: boolean;
}

export interface CreateProjectResult {
  project_id: string;
  cue_count: number;
  issue_count: number;
  status: string;
}

export interface IssuePage {
  total: number;
  offset: number;
  items: ApiIssue[];
}

export interface ExportResult {
  filename: string;
  format: string;
  subtitle: string;
  placement: Record<string, unknown>;
  mux_command: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly details: Record<string, unknown> = {},
  ) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<never> {
  let code = "http_error";
  let message = `${resp.status} ${resp.statusText}`;
  let details: Record<string, unknown> = {};
  try {
    const body = await resp.json();
    if (typeof body.code === "string") code = body.code;
    if (typeof body.message === "string") message = body.message;
    if (body.details && typeof body.details === "object") details = body.details;
    // FastAPI request-validation errors arrive as {detail: [...]}.
    if (body.detail) message = JSON.stringify(body.detail);
  } catch {
    /* non-JSON error body; keep the status text */
  }
  throw new ApiError(resp.status, code, message, details);
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, init);
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  healthz(): Promise<{ status: string; version: string }> {
    return this.request("/healthz");
  }

  createProject(body: {
    video_ref: string;
    subtitle_name: string;
    subtitle_text: string;
    report: unknown;
    assets_dir?: string | null;
  }): Promise<CreateProjectResult> {
    return this.post("/api/v1/projects", body);
  }

  getProject(projectId: string): Promise<ProjectSummary> {
    return this.request(`/api/v1/projects/${projectId}`);
  }

  getCues(projectId: string): Promise<{ cues: ApiCue[] }> {
    return this.request(`/api/v1/projects/${projectId}/cues`);
  }

  getIssues(projectId: string, filter?: { kind?: string; cue?: number }): Promise<IssuePage> {
    const params = new URLSearchParams();
    if (filter?.kind) params.set("kind", filter.kind);
    if (filter?.cue !== undefined) params.set("cue", String(filter.cue));
    const qs = params.toString();
    return this.request(`/api/v1/projects/${projectId}/issues${qs ? "?" + qs : ""}`);
  }

  decide(
    projectId: string,
    issueId: string,
    action: "accept" | "reject" | "edit",
    payload?: Record<string, unknown>,
  ): Promise<{ issue: ApiIssue }> {
    return this.post(`/api/v1/projects/${projectId}/issues/${issueId}/decision`, {
      action,
      payload: payload ?? null,
    });
  }

  manualEdit(projectId: string, cueId: number, lines: string[]): Promise<{ cue: ApiCue }> {
    return this.post(`/api/v1/projects/${projectId}/cues/${cueId}/edit`, { lines });
  }

  exportProject(projectId: string, format?: string): Promise<ExportResult> {
    const qs = format ? `?format=${encodeURIComponent(format)}` : "";
    return this.post(`/api/v1/projects/${projectId}/export${qs}`, {});
  }

  assetUrl(relative: string): string {
    return this.baseUrl + relative;
  }
}
