// Dashboard model: a reducer over API events plus snapshots from the read
// endpoints. Holds no business logic of its own -- every number shown comes
// from the server; the model only organizes, dedups, and flags staleness.

import type {
  ApiEvent,
  GapEntry,
  Gaps,
  JournalRow,
  MetricValue,
  MetricsPayload,
  PendingApproval,
  Proposal,
} from "./types.js";

export type GaugeState = {
  metricId: string;
  display: string;
  target: number;
  comparator: string;
  met: boolean;
  gap: number;
};

export function gaugeOf(entry: GapEntry): GaugeState {
  return {
    metricId: entry.metric_id,
    display: entry.value === null ? "unknown" : formatValue(entry.value),
    target: entry.target,
    comparator: entry.comparator,
    met: entry.normalized_gap === 0,
    gap: entry.normalized_gap,
  };
}

export function formatValue(value: number): string {
  if (Number.isInteger(value)) {
    return String(value);
  }
  return value.toFixed(value < 10 ? 4 : 1);
}

export const STALE_AFTER_MS = 10_000;

export class DashboardModel {
  lastSeq = 0;
  lastSignalAt = 0;
  runPhase = "unknown";
  metrics = new Map<string, MetricValue>();
  gaps: Gaps | null = null;
  pendingApproval: PendingApproval | null = null;
  journal: JournalRow[] = [];
  commitCount = 0;
  lastVerdict: { verdict: string; reason: string } | null = null;
  private journalKeys = new Set<string>();

  /** Apply one streamed event; re-deliveries (seq <= lastSeq) are dropped. */
  applyEvent(event: ApiEvent, now: number = Date.now()): boolean {
    if (event.seq <= this.lastSeq) {
      return false;
    }
    this.lastSeq = event.seq;
    this.lastSignalAt = now;
    const payload = event.payload as Record<string, unknown>;
    switch (event.kind) {
      case "MetricUpdated": {
        const values = (payload.values as MetricValue[] | undefined) ?? [];
        for (const value of values) {
          this.metrics.set(`${value.metric_id}@${value.scope}`, value);
        }
        if (payload.gaps) {
          this.gaps = payload.gaps as Gaps;
        }
        break;
      }
      case "ProposalPending": {
        this.pendingApproval = {
          iteration: payload.iteration as number,
          proposal: payload.proposal as Proposal,
        };
        this.runPhase = "waiting_approval";
        break;
      }
      case "IterationCompleted": {
        const row = payload as unknown as JournalRow;
        this.addJournalRow(row);
        if (this.pendingApproval && this.pendingApproval.iteration === row.index) {
          this.pendingApproval = null;
        }
        this.runPhase = "running";
        break;
      }
      case "CommitCreated": {
        this.commitCount += 1;
        break;
      }
      case "RunTerminated": {
        this.lastVerdict = {
          verdict: payload.verdict as string,
          reason: payload.reason as string,
        };
        this.runPhase = "terminated";
        this.pendingApproval = null;
        break;
      }
    }
    return true;
  }

  markHeartbeat(now: number = Date.now()): void {
    this.lastSignalAt = now;
  }

  /** True once the heartbeat has been missing long enough that rendered
   * numbers must be visibly flagged. */
  isStale(now: number = Date.now(), threshold = STALE_AFTER_MS): boolean {
    return this.lastSignalAt > 0 && now - this.lastSignalAt > threshold;
  }

  addJournalRow(row: JournalRow): boolean {
    const key = `${row.run ?? 0}:${row.index}`;
    if (this.journalKeys.has(key)) {
      return false;
    }
    this.journalKeys.add(key);
    this.journal.push(row);
    return true;
  }

  setMetrics(payload: MetricsPayload): void {
    for (const value of payload.values) {
      this.metrics.set(`${value.metric_id}@${value.scope}`, value);
    }
    if (payload.gaps) {
      this.gaps = payload.gaps;
    }
  }

  setJournal(rows: JournalRow[]): void {
    for (const row of rows) {
      this.addJournalRow(row);
    }
  }

  gauges(): GaugeState[] {
    return (this.gaps?.entries ?? []).map(gaugeOf);
  }

  metricValue(metricId: string, scope = "database"): number | null {
    return this.metrics.get(`${metricId}@${scope}`)?.value ?? null;
  }
}
