/** Typed client for the control API. Injectable fetch so tests can mock it. */

import type {
  Identity,
  LatencyReport,
  SessionCreateRequest,
  SessionView,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = {
      method,
      headers: {
        Authorization: `Bearer ${this.token}`,
        ...(body !== undefined ? { "Content-Type": "application/json" } : {}),
      },
      ...(body !== undefined ? { body: JSON.stringify(body) } : {}),
    };
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const parsed = (await resp.json()) as { detail?: unknown };
        if (parsed.detail !== undefined) detail = JSON.stringify(parsed.detail);
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  whoami(): Promise<Identity> {
    return this.request("GET", "/api/whoami");
  }

  listSessions(): Promise<SessionView[]> {
    return this.request("GET", "/api/sessions");
  }

  createSession(req: SessionCreateRequest = {}): Promise<SessionView> {
    return this.request("POST", "/api/sessions", req);
  }

  suspend(id: number): Promise<SessionView> {
    return this.request("POST", `/api/sessions/${id}/suspend`);
  }

  resume(id: number): Promise<SessionView> {
    return this.request("POST", `/api/sessions/${id}/resume`);
  }

  destroy(id: number): Promise<SessionView> {
    return this.request("DELETE", `/api/sessions/${id}`);
  }

  getReport(runId: string): Promise<LatencyReport> {
    return this.request("GET", `/api/reports/${encodeURIComponent(runId)}`);
  }
}
