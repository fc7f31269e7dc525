// Glue between the model, the API client, and the event stream. The DOM
// layer calls these methods from button handlers; the round-trip test calls
// them directly, so what is tested is exactly what a click runs.

import { ApiClient } from "./api.js";
import { DashboardModel } from "./model.js";
import { subscribeWithResume } from "./sse.js";
import type { ContractEntryInput } from "./types.js";

export class DashboardController {
  readonly model = new DashboardModel();
  private approvalInFlight = false;

  constructor(readonly api: ApiClient) {}

  /** Pull one consistent snapshot of everything the panels render. */
  async refresh(): Promise<void> {
    const metrics = await this.api.metrics();
    this.model.setMetrics(metrics);
    const state = await this.api.state();
    this.model.runPhase = state.phase;
    this.model.setJournal(await this.api.journal());
    const pending = await this.api.approvals();
    this.model.pendingApproval = pending.length ? pending[0] : null;
  }

  /** Attach the live stream, resuming across disconnects until aborted. */
  attachStream(signal: AbortSignal): Promise<void> {
    return subscribeWithResume(
      this.api.baseUrl,
      () => this.model.lastSeq,
      {
        onEvent: (event) => this.model.applyEvent(event),
        onHeartbeat: () => this.model.markHeartbeat(),
      },
      signal,
    );
  }

  /** Post an approval decision. Idempotent on the client side: while one
   * decision is in flight (or the proposal is gone) further clicks no-op. */
  async decide(decision: "approve" | "reject", actor = "dashboard"): Promise<boolean> {
    const pending = this.model.pendingApproval;
    if (pending === null || this.approvalInFlight) {
      return false;
    }
    this.approvalInFlight = true;
    try {
      await this.api.postApproval(pending.iteration, decision, actor);
      return true;
    } finally {
      this.approvalInFlight = false;
    }
  }

  approve(actor = "dashboard"): Promise<boolean> {
    return this.decide("approve", actor);
  }

  reject(actor = "dashboard"): Promise<boolean> {
    return this.decide("reject", actor);
  }

  async submitContract(entries: ContractEntryInput[]): Promise<string | null> {
    const problem = validateContractEntries(entries);
    if (problem) {
      return problem;
    }
    await this.api.putContract(entries);
    return null;
  }
}

/** Client-side validation mirroring the server's bounds; the server remains
 * the authority and re-validates everything. */
export function validateContractEntries(entries: ContractEntryInput[]): string | null {
  if (!entries.length) {
    return "contract needs at least one target";
  }
  for (const entry of entries) {
    if (!entry.metric_id) {
      return "every entry needs a metric";
    }
    if (entry.comparator !== ">=" && entry.comparator !== "<=") {
      return `bad comparator for ${entry.metric_id}`;
    }
    if (!Number.isFinite(entry.target)) {
      return `target for ${entry.metric_id} must be a number`;
    }
    const isCoverage = entry.metric_id.endsWith("coverage");
    if (isCoverage && (entry.target < 0 || entry.target > 1)) {
      return `coverage target for ${entry.metric_id} must be within [0, 1]`;
    }
    if (!isCoverage && entry.target <= 0) {
      return `target for ${entry.metric_id} must be positive`;
    }
  }
  return null;
}
