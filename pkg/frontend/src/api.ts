/**
 * Typed client for the session-service JSON API.
 *
 * The fetch implementation is injectable so tests can run against an
 * in-memory stub server; all committed numbers originate from server
 * responses.
 */

import type {
  ConstraintUpdate,
  CreateSessionRequest,
  CreatedSession,
  MeasurementResponse,
  ProblemDocument,
  SessionView,
  WhatIfQuery,
  WhatIfResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(problem: ProblemDocument) {
    super(problem.detail || problem.title);
    this.code = problem.code;
    this.status = problem.status;
  }
}

export function newEntryToken(): string {
  const api = globalThis.crypto;
  if (api && "randomUUID" in api) return api.randomUUID();
  return `tok-${Date.now()}-${Math.random().toString(36).slice(2)}`;
}

export class SessionApi {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;
  private sessionId: string | null = null;
  private secret: string | null = null;

  constructor(baseUrl: string, fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
  }

  attach(sessionId: string, secret: string): void {
    this.sessionId = sessionId;
    this.secret = secret;
  }

  get attachedSession(): string | null {
    return this.sessionId;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.secret) headers["X-Session-Secret"] = this.secret;
    const response = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(payload as ProblemDocument);
    }
    return payload as T;
  }

  private sessionPath(suffix = ""): string {
    if (!this.sessionId) throw new Error("no session attached");
    return `/sessions/${this.sessionId}${suffix}`;
  }

  async createSession(request: CreateSessionRequest): Promise<CreatedSession> {
    const created = await this.request<CreatedSession>("POST", "/sessions", request);
    this.attach(created.id, created.secret);
    return created;
  }

  async submitMeasurement(y: number, token: string): Promise<MeasurementResponse> {
    return this.request<MeasurementResponse>("POST", this.sessionPath("/measurements"), {
      y,
      token,
    });
  }

  async whatIf(query: WhatIfQuery): Promise<WhatIfResponse> {
    return this.request<WhatIfResponse>("POST", this.sessionPath("/what-if"), query);
  }

  async updateConstraint(update: ConstraintUpdate): Promise<{ ok: boolean; y_min: number; delta: number }> {
    return this.request("PATCH", this.sessionPath("/constraint"), update);
  }

  async confirmCompletion(): Promise<{ status: string }> {
    return this.request("POST", this.sessionPath("/complete"), {});
  }

  async getSession(): Promise<SessionView> {
    return this.request<SessionView>("GET", this.sessionPath());
  }
}
