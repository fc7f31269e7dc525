// DOM rendering. Pure functions from model state to markup; no business
// logic, no numbers computed here beyond chart scaling.

import type { DashboardModel, GaugeState } from "./model.js";
import type { JournalRow, MetricHistory, QuestionRow, ToolEntry, TopicGroup } from "./types.js";

function esc(text: unknown): string {
  return String(text ?? "")
    .replaceAll("&", "&amp;").replaceAll("<", "&lt;").replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderGauges(container: HTMLElement, gauges: GaugeState[]): void {
  container.innerHTML = gauges.map((g) => `
    <div class="gauge ${g.met ? "met" : "unmet"}">
      <div class="gauge-name">${esc(g.metricId)}</div>
      <div class="gauge-value">${esc(g.display)}</div>
      <div class="gauge-target">target ${esc(g.comparator)} ${esc(g.target)}</div>
      <div class="gauge-state">${g.met ? "met" : `gap ${g.gap.toFixed(3)}`}</div>
    </div>`).join("")
    || `<p class="empty">No contract set. Add targets below to begin.</p>`;
}

export function trendPolyline(history: MetricHistory, width = 220, height = 60): string {
  const points = history.series
    .filter((p) => p.scope === "database" && p.value !== null)
    .map((p) => ({ x: p.iteration, y: p.value as number }));
  if (points.length === 0) {
    return "";
  }
  const xs = points.map((p) => p.x);
  const ys = points.map((p) => p.y);
  const xMin = Math.min(...xs), xMax = Math.max(...xs);
  const yMin = Math.min(...ys), yMax = Math.max(...ys);
  const sx = (x: number) => xMax === xMin ? width / 2 : ((x - xMin) / (xMax - xMin)) * (width - 8) + 4;
  const sy = (y: number) => yMax === yMin ? height / 2 : height - (((y - yMin) / (yMax - yMin)) * (height - 8) + 4);
  return points.map((p) => `${sx(p.x).toFixed(1)},${sy(p.y).toFixed(1)}`).join(" ");
}

export function renderTrends(container: HTMLElement, histories: MetricHistory[]): void {
  container.innerHTML = histories.map((h) => {
    const line = trendPolyline(h);
    return `
      <div class="trend">
        <div class="trend-name">${esc(h.metric_id)}</div>
        <svg viewBox="0 0 220 60" preserveAspectRatio="none">
          ${line ? `<polyline points="${line}" fill="none" />` : ""}
        </svg>
      </div>`;
  }).join("");
}

export function renderApproval(container: HTMLElement, model: DashboardModel): void {
  const pending = model.pendingApproval;
  if (!pending) {
    container.innerHTML = `<p class="empty">No proposal is waiting for approval.</p>`;
    return;
  }
  const p = pending.proposal;
  container.innerHTML = `
    <div class="proposal">
      <div class="proposal-head">
        <span class="tool">${esc(p.tool_name)}</span>
        <span class="scope">${esc(p.target_scope.level)}${p.target_scope.ids.length ? ": " + esc(p.target_scope.ids.join(", ")) : ""}</span>
        <span class="improvement">expected improvement ${p.expected_improvement.toFixed(3)}</span>
      </div>
      <pre class="params">${esc(JSON.stringify(p.parameters, null, 1))}</pre>
      <blockquote class="rationale">${esc(p.rationale)}</blockquote>
      <div class="actions">
        <button id="approve-btn">Approve</button>
        <button id="reject-btn" class="danger">Reject</button>
      </div>
    </div>`;
}

export function renderJournal(container: HTMLElement, journal: JournalRow[]): void {
  if (!journal.length) {
    container.innerHTML = `<p class="empty">No iterations yet.</p>`;
    return;
  }
  const rows = [...journal].reverse().map((r) => `
    <tr class="status-${esc(r.status)}">
      <td>${r.index}</td>
      <td>${esc(r.proposal?.tool_name ?? "-")}</td>
      <td>${esc(r.approval)}</td>
      <td>${esc(r.status)}</td>
      <td>${r.total_gap_after.toFixed(4)}</td>
      <td class="log">${esc(r.log.length > 140 ? r.log.slice(0, 140) + "…" : r.log)}</td>
    </tr>`).join("");
  container.innerHTML = `
    <table>
      <thead><tr><th>#</th><th>tool</th><th>approval</th><th>status</th><th>gap</th><th>log</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>`;
}

export function renderQuestions(container: HTMLElement, topics: TopicGroup[],
                                questions: QuestionRow[], filterTopic: string | null): void {
  const byId = new Map(questions.map((q) => [q.question_id, q]));
  const chips = topics.map((t) =>
    `<button class="chip ${filterTopic === t.topic ? "active" : ""}" data-topic="${esc(t.topic)}">
       ${esc(t.topic)} (${t.question_ids.length})
     </button>`).join("");
  const visible = filterTopic
    ? (topics.find((t) => t.topic === filterTopic)?.question_ids ?? []).map((id) => byId.get(id)!)
    : questions;
  const rows = visible.map((q) => `
    <details>
      <summary>${esc(q.question_id)} — ${esc(q.text)}${q.topic ? ` <span class="chip small">${esc(q.topic)}</span>` : ""}</summary>
      <pre>${esc(q.sql ?? "(no SQL yet)")}</pre>
      <p class="meta">origin ${esc(q.origin)} · version ${q.version_no ?? "-"} · exec ${q.exec_ms === null ? "-" : q.exec_ms.toFixed(1) + " ms"}</p>
    </details>`).join("");
  container.innerHTML = `<div class="chips">${chips}</div>${rows || `<p class="empty">No questions yet.</p>`}`;
}

export function renderTools(container: HTMLElement, tools: ToolEntry[]): void {
  container.innerHTML = tools.map((t) => `
    <div class="tool-card ${t.applicable ? "" : "inapplicable"}">
      <div class="tool-name">${esc(t.name)}</div>
      <div class="tool-desc">${esc(t.description)}</div>
      ${t.applicable
        ? `<div class="ok">applicable</div>`
        : `<div class="why-not">blocked: ${esc(t.failed_preconditions.join("; "))}</div>`}
    </div>`).join("");
}

export function renderStatusBar(container: HTMLElement, model: DashboardModel,
                                stale: boolean): void {
  const verdict = model.lastVerdict
    ? ` · last run: ${esc(model.lastVerdict.verdict)} (${esc(model.lastVerdict.reason)})`
    : "";
  container.innerHTML = `
    <span class="phase phase-${esc(model.runPhase)}">${esc(model.runPhase)}</span>
    <span>events: ${model.lastSeq}</span>
    <span>commits: ${model.commitCount}</span>${verdict}
    ${stale ? `<span class="stale">⚠ live feed lost — data may be stale</span>` : ""}`;
}
