// End-to-end round trip against the real service: run the fixture in gated
// mode, watch the pending proposal arrive over the live stream, approve it
// through the same controller method the Approve button calls, and verify
// the journal row and gauge updates arrive purely via stream deliveries.

import assert from "node:assert/strict";
import { after, before, test } from "node:test";
import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { ApiClient } from "../src/api.js";
import { DashboardController } from "../src/controller.js";

const PORT = 8460 + (process.pid % 400);
const BASE = `http://127.0.0.1:${PORT}`;
const PY = process.env.DATAPROD_PYTHON ?? "python3";
const CLI = "import sys; from dataprod.cli import main; sys.exit(main(sys.argv[1:]))";

let server: ChildProcess | null = null;
let workDir: string;

async function until<T>(probe: () => Promise<T | null> | T | null,
                        what: string, timeoutMs = 60_000): Promise<T> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const result = await probe();
    if (result !== null && result !== undefined && result !== false) {
      return result as T;
    }
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${what}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
}

before(async () => {
  workDir = mkdtempSync(join(tmpdir(), "dataprod-ui-"));
  const db = join(workDir, "retail.db");
  const built = spawnSync(PY, ["-c", CLI, "fixture", "init", db], { encoding: "utf-8" });
  assert.equal(built.status, 0, built.stderr);
  server = spawn(PY, [
    "-c", CLI, "serve",
    "--db", db,
    "--listen", `127.0.0.1:${PORT}`,
    "--store-dir", join(workDir, "store"),
  ], { stdio: ["ignore", "pipe", "pipe"] });
  await until(async () => {
    try {
      const response = await fetch(`${BASE}/api/v1/state`);
      return response.ok;
    } catch {
      return false;
    }
  }, "service to come up", 30_000);
});

after(() => {
  server?.kill("SIGTERM");
});

test("gated run round trip: rationale, approval, live gauge updates", async () => {
  const api = new ApiClient(BASE);
  const controller = new DashboardController(api);
  const model = controller.model;

  await api.putContract([
    { metric_id: "table_coverage", target: 0.9, comparator: ">=" },
    { metric_id: "column_coverage", target: 0.5, comparator: ">=" },
    { metric_id: "avg_exec_speed", target: 5000, comparator: "<=" },
  ]);
  await controller.refresh();
  const coverageBefore = model.gauges().find((g) => g.metricId === "table_coverage");
  assert.ok(coverageBefore && !coverageBefore.met);

  const abort = new AbortController();
  const streamDone = controller.attachStream(abort.signal);
  try {
    await api.startRun({ approval_mode: "gated", max_iterations: 2, seed: 0 });

    // the pending proposal arrives over the stream
    await until(() => model.pendingApproval, "first pending proposal");
    const pending = model.pendingApproval!;
    assert.equal(pending.proposal.tool_name, "question_generation");

    // the dashboard shows the rationale verbatim: byte-equal to the API's
    const direct = await api.approvals();
    assert.equal(direct.length, 1);
    assert.equal(pending.proposal.rationale, direct[0].proposal.rationale);
    assert.ok(pending.proposal.rationale.length > 0);

    // double-click safety: two concurrent clicks post a single decision
    const [first, second] = await Promise.all([
      controller.approve("ui-tester"),
      controller.approve("ui-tester"),
    ]);
    assert.ok(first !== second, "exactly one click should win");

    // the approval lands in the journal via the stream
    await until(() => model.journal.find((r) => r.index === 1),
                "iteration 1 in the journal");
    const row = model.journal.find((r) => r.index === 1)!;
    assert.equal(row.approval, "approved_by_human");
    assert.equal(row.status, "ok");

    // second iteration: text_to_sql lifts coverage; gauges update from the
    // stream's MetricUpdated delivery, with no extra refresh() call
    await until(() => model.pendingApproval, "second pending proposal");
    assert.equal(model.pendingApproval!.proposal.tool_name, "text_to_sql");
    await controller.approve("ui-tester");
    await until(() => model.journal.find((r) => r.index === 2),
                "iteration 2 in the journal");
    const coverageAfter = model.gauges().find((g) => g.metricId === "table_coverage");
    assert.ok(coverageAfter);
    assert.notEqual(coverageAfter.display, coverageBefore.display);
    assert.ok(coverageAfter.met);

    await until(() => model.runPhase === "terminated", "run termination");
  } finally {
    abort.abort();
    await streamDone.catch(() => undefined);
  }

  // journal endpoint and streamed rows agree
  const journal = await api.journal();
  assert.equal(journal.filter((r) => r.approval === "approved_by_human").length, 2);
});
