// Browser entry point: wires the controller to the page, attaches the live
// stream, and re-renders on every model change or poll.

import { ApiClient } from "./api.js";
import { DashboardController } from "./controller.js";
import {
  renderApproval,
  renderGauges,
  renderJournal,
  renderQuestions,
  renderStatusBar,
  renderTools,
  renderTrends,
} from "./render.js";
import type { ContractEntryInput, MetricHistory, QuestionRow, TopicGroup } from "./types.js";

const TREND_METRICS = [
  "table_coverage", "column_coverage", "question_count",
  "avg_query_length", "avg_query_complexity", "avg_exec_speed",
];

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node;
}

async function boot(): Promise<void> {
  const api = new ApiClient("");
  const controller = new DashboardController(api);
  const model = controller.model;
  let topics: TopicGroup[] = [];
  let questions: QuestionRow[] = [];
  let histories: MetricHistory[] = [];
  let topicFilter: string | null = null;

  function renderAll(): void {
    renderStatusBar(el("status-bar"), model, model.isStale());
    renderGauges(el("gauges"), model.gauges());
    renderTrends(el("trends"), histories);
    renderApproval(el("approval"), model);
    renderJournal(el("journal"), model.journal);
    renderQuestions(el("questions"), topics, questions, topicFilter);
    const approveBtn = document.getElementById("approve-btn");
    const rejectBtn = document.getElementById("reject-btn");
    approveBtn?.addEventListener("click", async () => {
      (approveBtn as HTMLButtonElement).disabled = true;
      await controller.approve();
    });
    rejectBtn?.addEventListener("click", async () => {
      (rejectBtn as HTMLButtonElement).disabled = true;
      await controller.reject();
    });
  }

  async function pollSlow(): Promise<void> {
    try {
      topics = await api.topics();
      questions = await api.questions();
      histories = await Promise.all(TREND_METRICS.map((m) => api.metricHistory(m)));
      renderTools(el("tools"), await api.tools());
    } catch {
      // disconnected; the status bar shows staleness
    }
    renderAll();
  }

  el("questions").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const topic = target.dataset?.topic;
    if (topic !== undefined) {
      topicFilter = topicFilter === topic ? null : topic;
      renderAll();
    }
  });

  el("run-start").addEventListener("click", async () => {
    const gated = (el("gated-toggle") as HTMLInputElement).checked;
    await api.startRun({ approval_mode: gated ? "gated" : "auto" }).catch(showError);
  });
  el("run-pause").addEventListener("click", () => api.pauseRun().catch(showError));
  el("run-resume").addEventListener("click", () => api.resumeRun().catch(showError));
  el("run-stop").addEventListener("click", () => api.stopRun().catch(showError));
  el("run-step").addEventListener("click", async () => {
    await api.stepRun().catch(showError);
    await controller.refresh();
    await pollSlow();
  });

  el("contract-form").addEventListener("submit", async (event) => {
    event.preventDefault();
    const entries: ContractEntryInput[] = [];
    for (const row of document.querySelectorAll<HTMLElement>(".contract-row")) {
      const metric = (row.querySelector(".c-metric") as HTMLInputElement).value;
      const raw = (row.querySelector(".c-target") as HTMLInputElement).value;
      const comparator = (row.querySelector(".c-cmp") as HTMLSelectElement).value;
      if (metric && raw !== "") {
        entries.push({ metric_id: metric, target: Number(raw), comparator });
      }
    }
    const problem = await controller.submitContract(entries).catch((e) => e.message);
    el("contract-error").textContent = problem ?? "";
    if (!problem) {
      await controller.refresh();
      renderAll();
    }
  });

  function showError(err: { message?: string }): void {
    el("contract-error").textContent = err?.message ?? String(err);
  }

  await controller.refresh().catch(() => undefined);
  await pollSlow();

  const abort = new AbortController();
  window.addEventListener("beforeunload", () => abort.abort());
  void controller.attachStream(abort.signal);

  // stream events update the model; re-render on a short cadence and poll
  // the slow-changing panels occasionally
  setInterval(renderAll, 500);
  setInterval(pollSlow, 5000);
}

void boot();
