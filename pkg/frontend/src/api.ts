// Thin fetch client for the control API. Every call maps 1:1 onto a
// documented endpoint; errors surface the server's machine-readable code.

import type {
  CommitRow,
  ContractEntryInput,
  Gaps,
  JournalRow,
  MetricHistory,
  MetricsPayload,
  PendingApproval,
  QuestionRow,
  StatePayload,
  ToolEntry,
  TopicGroup,
} from "./types.js";

export class ApiError extends Error {
  constructor(public code: string, message: string, public status: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(public baseUrl: string = "") {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    const parsed = text ? JSON.parse(text) : null;
    if (!response.ok) {
      const err = parsed?.error ?? { code: "http_error", message: text };
      throw new ApiError(err.code, err.message, response.status);
    }
    return parsed as T;
  }

  connectDatasource(profile: { location: string; questions_path?: string }) {
    return this.request<Record<string, unknown>>("POST", "/api/v1/datasource", profile);
  }

  state() {
    return this.request<StatePayload>("GET", "/api/v1/state");
  }

  metrics() {
    return this.request<MetricsPayload>("GET", "/api/v1/metrics");
  }

  metricHistory(metricId: string) {
    return this.request<MetricHistory>("GET", `/api/v1/metrics/${metricId}/history`);
  }

  tools() {
    return this.request<ToolEntry[]>("GET", "/api/v1/tools");
  }

  questions() {
    return this.request<QuestionRow[]>("GET", "/api/v1/questions");
  }

  topics() {
    return this.request<TopicGroup[]>("GET", "/api/v1/topics");
  }

  commits() {
    return this.request<CommitRow[]>("GET", "/api/v1/commits");
  }

  journal() {
    return this.request<JournalRow[]>("GET", "/api/v1/run/journal");
  }

  contract() {
    return this.request<{ entries: ContractEntryInput[] }>("GET", "/api/v1/contract");
  }

  putContract(entries: ContractEntryInput[]) {
    return this.request<Gaps>("PUT", "/api/v1/contract", { entries });
  }

  startRun(options: { max_iterations?: number; approval_mode?: string; seed?: number }) {
    return this.request<Record<string, unknown>>("POST", "/api/v1/run/start", options);
  }

  pauseRun() {
    return this.request<Record<string, unknown>>("POST", "/api/v1/run/pause", {});
  }

  resumeRun() {
    return this.request<Record<string, unknown>>("POST", "/api/v1/run/resume", {});
  }

  stopRun() {
    return this.request<Record<string, unknown>>("POST", "/api/v1/run/stop", {});
  }

  stepRun() {
    return this.request<Record<string, unknown>>("POST", "/api/v1/run/step", {});
  }

  approvals() {
    return this.request<PendingApproval[]>("GET", "/api/v1/approvals");
  }

  postApproval(iteration: number, decision: "approve" | "reject", actor: string) {
    return this.request<Record<string, unknown>>(
      "POST", `/api/v1/approvals/${iteration}`, { decision, actor });
  }
}
