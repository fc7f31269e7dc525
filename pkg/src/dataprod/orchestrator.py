"""The improvement loop: plan, parameterize, execute, update, measure.

One loop runs at a time per data product. The loop thread is the single
state writer; approval decisions and pause/stop commands arrive from other
threads through the gate and command flags, and waiting for an approval
blocks the loop, never the API.

Tool executions are transactional: events are applied only from a complete
ToolResult, so a failed tool leaves no partial artifacts and the journal
stays trustworthy. Every applied event is attributable to exactly one
iteration record via its recorded event-id span.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .connector import SqliteConnector
from .errors import (
    BusyError,
    DataProdError,
    DataSourceConnectionError,
    NoPendingApprovalError,
    UnknownIterationError,
    ValidationError,
)
from .metrics import MetricsEngine
from .planner import ActionProposal, plan
from .registry import ToolRegistry
from .state import ContextScope, ContractEntry, EventKind, StateEvent, StateStore
from .tools import ToolExecutor, ToolInvocation, ToolResult
from .versionstore import VersionStore

APPROVAL_AUTO = "auto"
APPROVAL_APPROVED = "approved_by_human"
APPROVAL_REJECTED = "rejected_by_human"

VERDICT_CONVERGED = "converged"
VERDICT_MANUAL_REVIEW = "manual_review"
VERDICT_BUDGET_EXHAUSTED = "budget_exhausted"
VERDICT_STOPPED = "stopped"
VERDICT_ERROR = "error"


@dataclass(frozen=True)
class RunConfig:
    contract: tuple[ContractEntry, ...]
    max_iterations: int = 25
    approval_mode: str = "auto"  # "auto" | "gated"
    seed: int = 0
    stagnation_epsilon: float = 0.01
    stagnation_deltas: int = 3
    rejection_suppression: int = 3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.approval_mode not in ("auto", "gated"):
            raise ValidationError("approval_mode must be 'auto' or 'gated'")


@dataclass
class IterationRecord:
    index: int
    proposal: Optional[dict]
    approval: str
    status: str  # "ok" | "failed" | "rejected"
    log: str
    total_gap_after: float
    metric_values: list[dict] = field(default_factory=list)
    commit_ids: list[str] = field(default_factory=list)
    first_event_id: Optional[int] = None
    last_event_id: Optional[int] = None
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "proposal": self.proposal,
            "approval": self.approval,
            "status": self.status,
            "log": self.log,
            "total_gap_after": self.total_gap_after,
            "metric_values": self.metric_values,
            "commit_ids": self.commit_ids,
            "first_event_id": self.first_event_id,
            "last_event_id": self.last_event_id,
            "error": self.error,
        }


@dataclass
class RunReport:
    verdict: str
    reason: str
    iterations: list[IterationRecord]
    final_total_gap: float
    gap_history: list[float]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "iterations": [r.to_dict() for r in self.iterations],
            "final_total_gap": self.final_total_gap,
            "gap_history": self.gap_history,
        }


@dataclass
class _StepOutcome:
    record: Optional[IterationRecord] = None
    verdict: Optional[str] = None
    reason: str = ""


class ApprovalGate:
    """Hand-off point between the blocked loop thread and API threads."""

    def __init__(self):
        self._cond = threading.Condition()
        self._pending: Optional[tuple[int, ActionProposal]] = None
        self._decision: Optional[tuple[str, str]] = None

    def pending(self) -> Optional[dict]:
        with self._cond:
            if self._pending is None:
                return None
            iteration, proposal = self._pending
            return {"iteration": iteration, "proposal": proposal.to_payload()}

    def request(self, iteration: int, proposal: ActionProposal,
                stop: threading.Event) -> tuple[str, str]:
        """Block until a decision arrives; returns (decision, actor).
        A stop request yields ("stopped", "")."""
        with self._cond:
            self._pending = (iteration, proposal)
            self._decision = None
            self._cond.notify_all()
            while self._decision is None and not stop.is_set():
                self._cond.wait(timeout=0.05)
            self._pending = None
            decision = self._decision
            self._decision = None
        if decision is None:
            return ("stopped", "")
        return decision

    def decide(self, iteration: int, decision: str, actor: str) -> None:
        if decision not in ("approve", "reject"):
            raise ValidationError("decision must be 'approve' or 'reject'")
        with self._cond:
            if self._pending is None:
                raise NoPendingApprovalError("no proposal is waiting for approval")
            if self._pending[0] != iteration:
                raise UnknownIterationError(
                    f"pending approval is for iteration {self._pending[0]}, "
                    f"not {iteration}")
            self._decision = (decision, actor)
            self._cond.notify_all()


class _Session:
    def __init__(self, config: RunConfig, run_number: int, initial_gap: float):
        self.config = config
        self.run_number = run_number
        self.history: list[float] = [initial_gap]
        self.suppressed: dict[tuple[str, str], int] = {}
        self.next_index = 1
        self.records: list[IterationRecord] = []


class Orchestrator:
    def __init__(self, store: StateStore, engine: MetricsEngine,
                 registry: ToolRegistry, executor: ToolExecutor,
                 connector: SqliteConnector, version_store: VersionStore,
                 emit: Optional[Callable[[str, dict], None]] = None):
        self.store = store
        self.engine = engine
        self.registry = registry
        self.executor = executor
        self.connector = connector
        self.version_store = version_store
        self.gate = ApprovalGate()
        self._emit = emit or (lambda kind, payload: None)
        self._busy = threading.Lock()
        self._stop = threading.Event()
        self._pause = threading.Event()
        self._phase = "idle"
        self._phase_lock = threading.Lock()
        self._session: Optional[_Session] = None
        self._run_counter = 0
        self.journal_path = os.path.join(version_store.directory, "journal.jsonl")

    # -- phase and commands ---------------------------------------------------

    @property
    def phase(self) -> str:
        with self._phase_lock:
            return self._phase

    def _set_phase(self, phase: str) -> None:
        with self._phase_lock:
            self._phase = phase

    def request_stop(self) -> None:
        self._stop.set()

    def request_pause(self) -> None:
        self._pause.set()

    def request_resume(self) -> None:
        self._pause.clear()

    def resolve_approval(self, iteration: int, decision: str, actor: str) -> None:
        self.gate.decide(iteration, decision, actor)

    def journal(self) -> list[IterationRecord]:
        return list(self._session.records) if self._session else []

    # -- the loop -----------------------------------------------------------------

    def run_loop(self, config: RunConfig) -> RunReport:
        """Run iterations until the contract converges, stagnation is
        detected, the budget runs out, or an operator stops the run."""
        if not self._busy.acquire(blocking=False):
            raise BusyError("a run is already active")
        try:
            self._stop.clear()
            session = self._new_session(config)
            verdict, reason = VERDICT_BUDGET_EXHAUSTED, "iteration budget reached"
            while session.next_index <= config.max_iterations:
                if self._wait_if_paused():
                    verdict, reason = VERDICT_STOPPED, "stopped by operator"
                    break
                self._set_phase("running")
                try:
                    outcome = self._step(session, wrap_up_on_convergence=True)
                except DataSourceConnectionError as exc:
                    verdict, reason = VERDICT_ERROR, f"connector failure: {exc}"
                    break
                if outcome.record is not None:
                    self._record(session, outcome.record)
                if outcome.verdict is not None:
                    verdict, reason = outcome.verdict, outcome.reason
                    break
            return self._finish(session, verdict, reason)
        finally:
            self._set_phase("terminated")
            self._busy.release()

    def step(self, config: RunConfig) -> _StepOutcome:
        """Execute exactly one iteration; sessions persist across calls so
        stepping honors gap history and rejection suppression."""
        if not self._busy.acquire(blocking=False):
            raise BusyError("a run is already active")
        try:
            self._stop.clear()
            if self._session is None or self._session.config != config:
                session = self._new_session(config)
            else:
                session = self._session
            if session.next_index > config.max_iterations:
                return _StepOutcome(verdict=VERDICT_BUDGET_EXHAUSTED,
                                    reason="iteration budget reached")
            self._set_phase("running")
            outcome = self._step(session, wrap_up_on_convergence=False)
            if outcome.record is not None:
                self._record(session, outcome.record)
            return outcome
        finally:
            self._set_phase("idle")
            self._busy.release()

    # -- internals -------------------------------------------------------------------

    def _new_session(self, config: RunConfig) -> _Session:
        contract = self.engine.validate_contract(config.contract)
        snapshot = self.store.snapshot()
        initial_gap = self.engine.gap(contract, snapshot).total_gap
        self._run_counter += 1
        self._session = _Session(config, self._run_counter, initial_gap)
        return self._session

    def _wait_if_paused(self) -> bool:
        """Block while paused; True when a stop arrived."""
        while self._pause.is_set() and not self._stop.is_set():
            self._set_phase("paused")
            time.sleep(0.02)
        return self._stop.is_set()

    def _record(self, session: _Session, record: IterationRecord) -> None:
        session.records.append(record)
        self._persist_record(session, record)
        self._emit("IterationCompleted", {"run": session.run_number,
                                          **record.to_dict()})

    def _persist_record(self, session: _Session, record: IterationRecord) -> None:
        with open(self.journal_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"run": session.run_number, **record.to_dict()},
                                sort_keys=True) + "\n")

    def _finish(self, session: _Session, verdict: str, reason: str) -> RunReport:
        report = RunReport(
            verdict=verdict,
            reason=reason,
            iterations=list(session.records),
            final_total_gap=session.history[-1],
            gap_history=list(session.history),
        )
        self._emit("RunTerminated", {"run": session.run_number,
                                     "verdict": verdict, "reason": reason,
                                     "final_total_gap": report.final_total_gap})
        return report

    def _step(self, session: _Session, wrap_up_on_convergence: bool) -> _StepOutcome:
        config = session.config
        index = session.next_index
        snapshot = self.store.snapshot()
        gap = self.engine.gap(config.contract, snapshot)
        active_suppressions = {
            pair for pair, until in session.suppressed.items() if index <= until
        }
        verdict = plan(snapshot, gap, session.history, self.engine, self.registry,
                       iteration=index, suppressed=active_suppressions,
                       epsilon=config.stagnation_epsilon,
                       deltas=config.stagnation_deltas)
        if verdict.kind == "converged":
            if wrap_up_on_convergence:
                record = self._organizational_wrap_up(session, index)
                if record is not None:
                    session.next_index = index + 1
                    return _StepOutcome(record=record, verdict=VERDICT_CONVERGED,
                                        reason="all contract targets met")
            return _StepOutcome(verdict=VERDICT_CONVERGED,
                                reason="all contract targets met")
        if verdict.kind == "manual_review":
            return _StepOutcome(verdict=VERDICT_MANUAL_REVIEW, reason=verdict.reason)

        proposal = verdict.proposal
        assert proposal is not None
        session.next_index = index + 1
        return _StepOutcome(record=self._execute_proposal(session, index, proposal))

    def _organizational_wrap_up(self, session: _Session,
                                index: int) -> Optional[IterationRecord]:
        """After convergence, cluster questions into topics once (the loop's
        closing organizational pass) if the tool is applicable."""
        applicable = {t.name for t in self.registry.applicable_tools(self.store.snapshot())}
        if "topic_mapping" not in applicable:
            return None
        proposal = ActionProposal(
            tool_name="topic_mapping",
            target_scope=ContextScope.database(),
            parameters={},
            expected_improvement=0.0,
            rationale=("contract targets met; clustering questions into topics "
                       "for a high-level overview"),
            iteration=index,
        )
        return self._execute_proposal(session, index, proposal)

    def _execute_proposal(self, session: _Session, index: int,
                          proposal: ActionProposal) -> IterationRecord:
        config = session.config
        approval = APPROVAL_AUTO
        if config.approval_mode == "gated":
            self._set_phase("waiting_approval")
            self._emit("ProposalPending", {"run": session.run_number,
                                           "iteration": index,
                                           "proposal": proposal.to_payload()})
            decision, actor = self.gate.request(index, proposal, self._stop)
            self._set_phase("running")
            if decision == "stopped":
                return IterationRecord(
                    index=index, proposal=proposal.to_payload(),
                    approval=APPROVAL_REJECTED, status="rejected",
                    log="run stopped while waiting for approval",
                    total_gap_after=session.history[-1])
            if decision == "reject":
                pair = (proposal.tool_name, proposal.target_scope.key())
                session.suppressed[pair] = index + config.rejection_suppression
                session.history.append(session.history[-1])
                return IterationRecord(
                    index=index, proposal=proposal.to_payload(),
                    approval=APPROVAL_REJECTED, status="rejected",
                    log=f"rejected by {actor}; {proposal.tool_name} suppressed "
                        f"for {config.rejection_suppression} iteration(s)",
                    total_gap_after=session.history[-1])
            approval = APPROVAL_APPROVED

        invocation = ToolInvocation(
            tool_name=proposal.tool_name,
            parameters=proposal.parameters,
            target_scope=proposal.target_scope,
            seed=config.seed * 100003 + index,
            iteration=index,
        )
        try:
            result = self.executor.execute(self.store.snapshot(), invocation,
                                           self.connector)
        except DataSourceConnectionError:
            raise
        except DataProdError as exc:
            session.history.append(session.history[-1])
            return IterationRecord(
                index=index, proposal=proposal.to_payload(), approval=approval,
                status="failed", log=f"tool execution failed: {exc}",
                total_gap_after=session.history[-1], error=exc.code)
        return self._apply_result(session, index, proposal, approval, result)

    def _apply_result(self, session: _Session, index: int,
                      proposal: ActionProposal, approval: str,
                      result: ToolResult) -> IterationRecord:
        applied: list[StateEvent] = []
        targets: set = set()
        for pending in result.events:
            event = self.store.apply(pending)
            applied.append(event)
            targets |= self.engine.resolve_contexts(event, self.store.snapshot())
        values = []
        if targets:
            values = self.engine.recalculate(self.store.snapshot(), targets,
                                             iteration=index)
            self._emit("MetricUpdated", {
                "run": session.run_number,
                "iteration": index,
                "values": [_value_payload(v) for v in values],
                "gaps": self.engine.gap(session.config.contract,
                                        self.store.snapshot()).to_payload(),
            })
        commit_ids: list[str] = []
        files = self._artifact_files(applied)
        if files:
            commit_id = self.version_store.commit(
                files, author=proposal.tool_name,
                message=f"iteration {index}: {proposal.tool_name}")
            commit_ids.append(commit_id)
            self._emit("CommitCreated", {"run": session.run_number,
                                         "iteration": index,
                                         "commit_id": commit_id})
        gap_after = self.engine.gap(session.config.contract, self.store.snapshot())
        session.history.append(gap_after.total_gap)
        return IterationRecord(
            index=index,
            proposal=proposal.to_payload(),
            approval=approval,
            status="ok",
            log=result.log,
            total_gap_after=gap_after.total_gap,
            metric_values=[_value_payload(v) for v in values],
            commit_ids=commit_ids,
            first_event_id=applied[0].event_id if applied else None,
            last_event_id=applied[-1].event_id if applied else None,
        )

    def _artifact_files(self, events: list[StateEvent]) -> dict[str, bytes]:
        files: dict[str, bytes] = {}
        topics_changed = False
        for event in events:
            payload = event.payload
            if event.kind is EventKind.QUESTION_ADDED:
                files[f"questions/{payload.question_id}.txt"] = (
                    payload.text + "\n").encode("utf-8")
            elif event.kind is EventKind.QUERY_VERSION_ADDED:
                files[f"sql/{payload.question_id}/v{payload.version_no}.sql"] = (
                    payload.sql_text + "\n").encode("utf-8")
            elif event.kind is EventKind.VIEW_ADDED:
                files[f"views/{payload.name}.sql"] = (
                    payload.sql_text + "\n").encode("utf-8")
            elif event.kind is EventKind.TOPIC_ASSIGNED:
                topics_changed = True
        if topics_changed:
            lines = [f"{qid}\t{label}" for qid, label
                     in sorted(self.store.snapshot().topics.items())]
            files["topics/assignments.txt"] = ("\n".join(lines) + "\n").encode("utf-8")
        return files


def _value_payload(value) -> dict:
    return {
        "metric_id": value.metric_id,
        "scope": value.scope.key(),
        "value": value.value,
        "computed_at_version": value.computed_at_version,
        "iteration": value.iteration,
    }
