from __future__ import annotations

import itertools
import json
import threading
import time

import pytest

from dataprod.connector import ConnectionProfile
from dataprod.errors import BusyError, NoPendingApprovalError, UnknownIterationError
from dataprod.metrics import Direction, MetricDefinition, MetricsEngine
from dataprod.orchestrator import Orchestrator, RunConfig
from dataprod.registry import (
    Impact,
    PreconditionRule,
    ToolDescriptor,
    ToolRegistry,
)
from dataprod.runtime import AppRuntime
from dataprod.state import (
    ContextScope,
    ContractEntry,
    EventKind,
    PendingEvent,
    Question,
    QuestionOrigin,
    ScopeLevel,
    StateStore,
)
from dataprod.tools import ToolResult, _next_question_number
from dataprod.versionstore import VersionStore

from conftest import FakeTimer, add_question, add_table

CASE_STUDY_CONTRACT = (
    ContractEntry("table_coverage", 0.90, ">="),
    ContractEntry("column_coverage", 0.50, ">="),
    ContractEntry("avg_exec_speed", 5000.0, "<="),
)


def fixed_clock():
    counter = itertools.count(1_700_000_000)
    return lambda: float(next(counter))


@pytest.fixture
def runtime(tmp_path, retail_db_path):
    rt = AppRuntime(str(tmp_path / "store"), clock=fixed_clock(), timer=FakeTimer())
    rt.connect_datasource(ConnectionProfile(retail_db_path))
    yield rt
    rt.close()


# --- convergence ------------------------------------------------------------------

def test_case_study_contract_converges(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    started = time.monotonic()
    report = runtime.run_headless({"max_iterations": 15, "seed": 0})
    elapsed = time.monotonic() - started
    assert report.verdict == "converged"
    assert len(report.iterations) <= 15
    assert elapsed < 60
    gap = runtime.engine.gap(CASE_STUDY_CONTRACT)
    assert gap.total_gap == 0.0
    for entry in gap.entries:
        if entry.comparator == ">=":
            assert entry.value >= entry.target
        else:
            assert entry.value <= entry.target


def test_budget_of_one_yields_single_record(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    report = runtime.run_headless({"max_iterations": 1})
    assert report.verdict == "budget_exhausted"
    assert len(report.iterations) == 1
    assert report.iterations[0].index == 1


def test_monotone_effort(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    report = runtime.run_headless({"max_iterations": 15})
    history = report.gap_history
    for record in report.iterations:
        if record.status == "ok":
            assert history[record.index] <= history[record.index - 1] + 1e-12


def test_journal_attributes_every_event(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    base_version = runtime.store.snapshot().version
    report = runtime.run_headless({"max_iterations": 15})
    spans = [(r.first_event_id, r.last_event_id) for r in report.iterations
             if r.first_event_id is not None]
    covered = []
    for first, last in spans:
        covered.extend(range(first, last + 1))
    expected = list(range(base_version + 1, runtime.store.snapshot().version + 1))
    assert covered == expected  # complete, ordered, non-overlapping


def test_auto_mode_is_deterministic(tmp_path, retail_db_path):
    def run_once(tag):
        rt = AppRuntime(str(tmp_path / f"store-{tag}"),
                        clock=fixed_clock(), timer=FakeTimer())
        try:
            rt.connect_datasource(ConnectionProfile(retail_db_path))
            rt.put_contract(list(CASE_STUDY_CONTRACT))
            report = rt.run_headless({"max_iterations": 15, "seed": 3})
            return report.to_dict(), rt.store.snapshot()
        finally:
            rt.close()

    report_a, state_a = run_once("a")
    report_b, state_b = run_once("b")
    assert report_a == report_b
    assert state_a == state_b


def test_connector_failure_halts_with_error(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    runtime.connector.close()
    report = runtime.run_headless({"max_iterations": 5})
    assert report.verdict == "error"
    assert "connector failure" in report.reason


# --- step --------------------------------------------------------------------------

def test_step_on_converged_state(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    runtime.run_headless({"max_iterations": 15})
    outcome = runtime.step_run({"max_iterations": 15})
    assert outcome["verdict"] == "converged"
    assert outcome["record"] is None


def test_step_twice_is_deterministic(tmp_path, retail_db_path):
    def two_steps(tag):
        rt = AppRuntime(str(tmp_path / f"s-{tag}"),
                        clock=fixed_clock(), timer=FakeTimer())
        try:
            rt.connect_datasource(ConnectionProfile(retail_db_path))
            rt.put_contract(list(CASE_STUDY_CONTRACT))
            return [rt.step_run({"seed": 5}), rt.step_run({"seed": 5})]
        finally:
            rt.close()

    assert two_steps("a") == two_steps("b")


def test_step_while_auto_run_active_is_busy(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    release = threading.Event()

    class SlowExecutor:
        def __init__(self, inner):
            self.inner = inner

        def execute(self, state, invocation, connector):
            release.wait(timeout=10)
            return self.inner.execute(state, invocation, connector)

    runtime.orchestrator.executor = SlowExecutor(runtime.orchestrator.executor)
    runtime.start_run({"max_iterations": 1})
    try:
        time.sleep(0.1)
        with pytest.raises(BusyError):
            runtime.orchestrator.step(runtime._run_config({"max_iterations": 1}))
    finally:
        release.set()
        runtime._run_thread.join(timeout=10)


# --- approval gating ----------------------------------------------------------------

def run_gated(runtime, policy, max_iterations):
    """Run a gated loop with an approval policy thread.

    ``policy(iteration, proposal) -> "approve" | "reject"``.
    """
    decisions = []

    def approver():
        while runtime.run_active() or runtime.orchestrator.gate.pending():
            pending = runtime.orchestrator.gate.pending()
            if pending:
                decision = policy(pending["iteration"], pending["proposal"])
                try:
                    runtime.orchestrator.resolve_approval(
                        pending["iteration"], decision, "tester")
                    decisions.append((pending["iteration"], decision))
                except NoPendingApprovalError:
                    pass
            time.sleep(0.005)

    runtime.start_run({"max_iterations": max_iterations, "approval_mode": "gated"})
    thread = threading.Thread(target=approver, daemon=True)
    thread.start()
    runtime._run_thread.join(timeout=60)
    thread.join(timeout=5)
    assert not runtime.run_active()
    return decisions, runtime.last_report


def test_gated_approve_executes(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    decisions, report = run_gated(runtime, lambda i, p: "approve", max_iterations=3)
    assert decisions
    assert all(d == "approve" for _, d in decisions)
    oks = [r for r in report.iterations if r.status == "ok"]
    assert oks and all(r.approval == "approved_by_human" for r in oks)
    assert runtime.store.snapshot().questions  # events were applied


def test_gated_reject_is_a_state_noop(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    version_before = runtime.store.snapshot().version
    decisions, report = run_gated(runtime, lambda i, p: "reject", max_iterations=1)
    assert runtime.store.snapshot().version == version_before
    assert report.iterations[0].status == "rejected"
    assert report.iterations[0].approval == "rejected_by_human"


def test_rejection_suppresses_tool_for_three_iterations(runtime):
    # question_count gap makes question_generation the standing argmax;
    # seeded SQL-less questions keep other tools applicable after rejection
    from dataprod.state import SchemaTarget

    targets = [
        (SchemaTarget("orders", "total_amount"), SchemaTarget("orders", "status")),
        (SchemaTarget("customers", "city"),),
    ]
    for i in range(1, 9):
        add_question(runtime.store, f"q{i:04d}",
                     text=f"What is the total value for segment {i}?",
                     targets=targets[i % 2], origin=QuestionOrigin.HUMAN)
    runtime.engine.recalculate_all(runtime.store.snapshot())
    runtime.put_contract([
        ContractEntry("question_count", 100.0, ">="),
        ContractEntry("table_coverage", 0.90, ">="),
    ])

    def policy(iteration, proposal):
        return "reject" if iteration == 1 else "approve"

    decisions, report = run_gated(runtime, policy, max_iterations=5)
    proposals = {r.index: r.proposal["tool_name"] for r in report.iterations}
    assert proposals[1] == "question_generation"
    assert report.iterations[0].status == "rejected"
    for index in (2, 3, 4):
        assert proposals[index] != "question_generation"
    assert proposals[5] == "question_generation"  # suppression window expired


def test_approval_errors(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    with pytest.raises(NoPendingApprovalError):
        runtime.orchestrator.resolve_approval(1, "approve", "tester")
    runtime.start_run({"max_iterations": 1, "approval_mode": "gated"})
    try:
        deadline = time.monotonic() + 10
        while not runtime.orchestrator.gate.pending():
            assert time.monotonic() < deadline
            time.sleep(0.01)
        pending = runtime.orchestrator.gate.pending()
        with pytest.raises(UnknownIterationError):
            runtime.orchestrator.resolve_approval(99, "approve", "tester")
        runtime.orchestrator.resolve_approval(
            pending["iteration"], "approve", "tester")
        runtime._run_thread.join(timeout=30)
        with pytest.raises(NoPendingApprovalError):
            runtime.orchestrator.resolve_approval(
                pending["iteration"], "approve", "tester")
    finally:
        runtime.orchestrator.request_stop()
        runtime._run_thread.join(timeout=10)


# --- pause / stop -------------------------------------------------------------------

def test_pause_and_resume(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    runtime.start_run({"max_iterations": 15})
    runtime.pause_run()
    deadline = time.monotonic() + 10
    while runtime.orchestrator.phase != "paused":
        assert time.monotonic() < deadline
        if not runtime.run_active():  # finished before the pause landed
            return
        time.sleep(0.01)
    version = runtime.store.snapshot().version
    time.sleep(0.1)
    assert runtime.store.snapshot().version == version  # no progress while paused
    runtime.resume_run()
    runtime._run_thread.join(timeout=60)
    assert runtime.last_report is not None


def test_stop_terminates(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    runtime.start_run({"max_iterations": 15})
    runtime.pause_run()
    time.sleep(0.05)
    runtime.stop_run()
    assert not runtime.run_active()
    assert runtime.last_report.verdict in ("stopped", "converged")


# --- scripted diminishing returns ------------------------------------------------------

class CreepingExecutor:
    """Stub tool: each run adds one question, nudging the synthetic metric by
    a fixed 0.005 of its target."""

    def execute(self, state, invocation, connector):
        qid = f"q{_next_question_number(state):04d}"
        question = Question(qid, f"stub question {qid}",
                            QuestionOrigin.GENERATED, None, ())
        return ToolResult(
            events=[PendingEvent(EventKind.QUESTION_ADDED,
                                 ContextScope.question(qid), question)],
            log="crept forward by 0.005")


def test_manual_review_at_exactly_the_fourth_plan_call(tmp_path, retail_connector):
    store = StateStore()
    engine = MetricsEngine(clock=lambda: 0.0)
    engine.register(MetricDefinition(
        "progress", ScopeLevel.DATABASE, Direction.MAXIMIZE, "score",
        frozenset({"questions"}),
        lambda s, scope: min(1.0, 0.005 * len(s.questions))))
    registry = ToolRegistry(engine)
    registry.register(ToolDescriptor(
        name="creep", description="synthetic slow improver",
        input_params=(), output_schema=("questions",),
        execution_context=ScopeLevel.DATABASE,
        preconditions=(PreconditionRule("question_count", ">=", 0),),
        impacts=(Impact("progress", "increase", 1.0),)))
    engine.recalculate_all(store.snapshot())
    version_store = VersionStore(str(tmp_path / "vs"), clock=lambda: 0.0)
    orchestrator = Orchestrator(store, engine, registry, CreepingExecutor(),
                                retail_connector, version_store)
    report = orchestrator.run_loop(RunConfig(
        contract=(ContractEntry("progress", 1.0, ">="),),
        max_iterations=25))
    # plan calls 1..3 propose (gap shrinks 0.005 each); plan call 4 sees three
    # sub-epsilon deltas and recommends manual review
    assert report.verdict == "manual_review"
    assert len(report.iterations) == 3
    assert "diminishing returns" in report.reason
    assert report.gap_history == pytest.approx([1.0, 0.995, 0.99, 0.985])


def test_failed_tool_marks_iteration_and_continues(tmp_path, retail_connector):
    from dataprod.errors import NoEligibleQuestionError

    store = StateStore()
    add_table(store, __import__("conftest").table(
        "t1", ("a", __import__("dataprod.state", fromlist=["DataKind"]).DataKind.NUMERIC)))
    engine = MetricsEngine(clock=lambda: 0.0)
    engine.register_builtins()
    registry = ToolRegistry(engine)
    registry.register(ToolDescriptor(
        name="flaky", description="always fails",
        input_params=(), output_schema=(),
        execution_context=ScopeLevel.DATABASE,
        preconditions=(PreconditionRule("table_count", ">=", 1),),
        impacts=(Impact("table_coverage", "increase", 1.0),)))

    class FailingExecutor:
        def execute(self, state, invocation, connector):
            raise NoEligibleQuestionError("nothing to do")

    engine.recalculate_all(store.snapshot())
    version_store = VersionStore(str(tmp_path / "vs2"), clock=lambda: 0.0)
    orchestrator = Orchestrator(store, engine, registry, FailingExecutor(),
                                retail_connector, version_store)
    report = orchestrator.run_loop(RunConfig(
        contract=(ContractEntry("table_coverage", 0.9, ">="),),
        max_iterations=3))
    failed = [r for r in report.iterations if r.status == "failed"]
    assert failed and failed[0].error == "no_eligible_question"
    assert len(report.iterations) >= 1  # loop continued after the failure


def test_journal_persisted_to_disk(runtime):
    runtime.put_contract(list(CASE_STUDY_CONTRACT))
    report = runtime.run_headless({"max_iterations": 15})
    path = runtime.orchestrator.journal_path
    records = [json.loads(line) for line in open(path, encoding="utf-8")
               if line.strip()]
    assert len(records) == len(report.iterations)
    assert records[0]["index"] == 1
