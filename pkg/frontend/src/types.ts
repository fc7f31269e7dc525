// Wire types for the control API (/api/v1). Field names mirror the server
// payloads exactly; the UI never re-derives server-side numbers.

export type MetricValue = {
  metric_id: string;
  scope: string;
  value: number | null;
  computed_at_version: number;
  iteration: number;
};

export type GapEntry = {
  metric_id: string;
  target: number;
  comparator: string;
  value: number | null;
  normalized_gap: number;
  met: boolean;
};

export type Gaps = { total_gap: number; entries: GapEntry[] };

export type MetricsPayload = {
  values: MetricValue[];
  state_version: number;
  gaps?: Gaps;
};

export type HistoryPoint = {
  iteration: number;
  scope: string;
  value: number | null;
  computed_at_version: number;
  timestamp: number;
};

export type MetricHistory = { metric_id: string; series: HistoryPoint[] };

export type Proposal = {
  tool_name: string;
  target_scope: { level: string; ids: string[] };
  parameters: Record<string, unknown>;
  expected_improvement: number;
  rationale: string;
  iteration: number;
};

export type PendingApproval = { iteration: number; proposal: Proposal };

export type JournalRow = {
  run?: number;
  index: number;
  proposal: Proposal | null;
  approval: string;
  status: string;
  log: string;
  total_gap_after: number;
  metric_values: MetricValue[];
  commit_ids: string[];
  first_event_id: number | null;
  last_event_id: number | null;
  error: string | null;
};

export type ApiEvent = {
  seq: number;
  kind: string;
  payload: Record<string, unknown>;
};

export type StatePayload = {
  version: number;
  tables: { table_id: string; name: string; columns: string[]; row_count_estimate: number }[];
  question_count: number;
  questions_with_sql: number;
  view_count: number;
  topic_count: number;
  event_count: number;
  phase: string;
};

export type QuestionRow = {
  question_id: string;
  text: string;
  origin: string;
  parent_question: string | null;
  topic: string | null;
  sql: string | null;
  version_no: number | null;
  exec_ms: number | null;
  confidence: number | null;
};

export type TopicGroup = { topic: string; question_ids: string[] };

export type CommitRow = {
  commit_id: string;
  parent_id: string | null;
  author: string;
  timestamp: number;
  message: string;
  artifacts: string[];
};

export type ToolEntry = {
  name: string;
  description: string;
  preconditions: string[];
  impacts: { metric_id: string; sign: string; weight: number }[];
  applicable: boolean;
  failed_preconditions: string[];
};

export type ContractEntryInput = {
  metric_id: string;
  target: number;
  comparator: string;
};
