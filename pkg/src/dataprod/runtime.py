"""Composition root: wires the state store, metrics engine, tool registry,
connector, version store, and orchestrator behind one object the API and CLI
share. Also owns the sequence-numbered event feed the UI consumes.
"""

from __future__ import annotations

import json
import os
import queue
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .connector import ConnectionProfile, SqliteConnector, topological_table_order
from .errors import (
    InvalidTransitionError,
    NotConnectedError,
    NotFoundError,
    ValidationError,
)
from .metrics import GapVector, MetricsEngine
from .orchestrator import Orchestrator, RunConfig, RunReport
from .registry import ToolRegistry, build_default_registry
from .state import (
    ContextScope,
    ContractEntry,
    DataProductState,
    EventKind,
    PendingEvent,
    Question,
    QuestionOrigin,
    SchemaTarget,
    StateStore,
)
from .tools import BaselineToolExecutor, _next_question_number
from .versionstore import VersionStore


class EventBus:
    """Sequence-numbered fan-out feed with replayable history.

    Delivery is at-least-once; consumers dedup by sequence number and resume
    with ``since``.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._seq = 0
        self._history: list[dict] = []
        self._subscribers: list[queue.Queue] = []

    def emit(self, kind: str, payload: dict) -> dict:
        with self._lock:
            self._seq += 1
            event = {"seq": self._seq, "kind": kind, "payload": payload}
            self._history.append(event)
            subscribers = list(self._subscribers)
        for q in subscribers:
            q.put(event)
        return event

    def since(self, seq: int) -> list[dict]:
        with self._lock:
            return [e for e in self._history if e["seq"] > seq]

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    @property
    def last_seq(self) -> int:
        with self._lock:
            return self._seq


def load_questions_file(path: str) -> list[dict]:
    """Supplementary predefined questions: a JSON array of strings or
    {text, targets: [{table, column}]} objects, or plain text lines."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError:
        return [{"text": line.strip()} for line in raw.splitlines() if line.strip()]
    if not isinstance(data, list):
        raise ValidationError("questions file must be a JSON array or text lines")
    out = []
    for item in data:
        if isinstance(item, str):
            out.append({"text": item})
        elif isinstance(item, dict) and "text" in item:
            out.append(item)
        else:
            raise ValidationError("each question needs at least a 'text' field")
    return out


def derive_targets(state: DataProductState, text: str) -> tuple[SchemaTarget, ...]:
    """Best-effort schema targets for free-text questions: tables and columns
    whose names appear as words in the text."""
    lowered = text.lower()
    targets: list[SchemaTarget] = []
    for table in state.tables.values():
        table_mentioned = re.search(rf"\b{re.escape(table.name.lower())}\b", lowered)
        column_hits = [
            c.name for c in table.columns
            if re.search(rf"\b{re.escape(c.name.lower())}\b", lowered)
        ]
        for col in column_hits:
            targets.append(SchemaTarget(table.table_id, col))
        if table_mentioned and not column_hits:
            targets.append(SchemaTarget(table.table_id, None))
    return tuple(targets)


@dataclass
class AppConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8640
    store_dir: str = "./dataprod-store"
    db_path: Optional[str] = None
    questions_path: Optional[str] = None
    max_iterations: int = 25
    approval_mode: str = "auto"
    seed: int = 0
    statement_timeout_ms: int = 5000

    @staticmethod
    def load(path: Optional[str] = None,
             env: Optional[dict] = None) -> "AppConfig":
        """File values first, then DATAPROD_* environment overrides."""
        env = os.environ if env is None else env
        config = AppConfig()
        if path:
            with open(path, "r", encoding="utf-8") as fh:
                for key, value in json.load(fh).items():
                    if hasattr(config, key):
                        setattr(config, key, value)
        mapping = {
            "DATAPROD_LISTEN_HOST": ("listen_host", str),
            "DATAPROD_LISTEN_PORT": ("listen_port", int),
            "DATAPROD_STORE_DIR": ("store_dir", str),
            "DATAPROD_DB": ("db_path", str),
            "DATAPROD_QUESTIONS": ("questions_path", str),
            "DATAPROD_MAX_ITERATIONS": ("max_iterations", int),
            "DATAPROD_APPROVAL_MODE": ("approval_mode", str),
            "DATAPROD_SEED": ("seed", int),
            "DATAPROD_TIMEOUT_MS": ("statement_timeout_ms", int),
        }
        for env_key, (attr, cast) in mapping.items():
            if env_key in env:
                setattr(config, attr, cast(env[env_key]))
        return config


class AppRuntime:
    """Everything the service needs, shared by the API and the headless CLI."""

    def __init__(self, store_dir: str,
                 clock: Callable[[], float] = time.time,
                 timer: Callable[[], float] = time.perf_counter):
        os.makedirs(store_dir, exist_ok=True)
        self.store_dir = store_dir
        self.bus = EventBus()
        self._clock = clock
        self._timer = timer
        self.connector: Optional[SqliteConnector] = None
        self.store: Optional[StateStore] = None
        self.engine: Optional[MetricsEngine] = None
        self.registry: Optional[ToolRegistry] = None
        self.version_store: Optional[VersionStore] = None
        self.orchestrator: Optional[Orchestrator] = None
        self._run_thread: Optional[threading.Thread] = None
        self._last_report: Optional[RunReport] = None
        self._lifecycle = threading.Lock()

    # -- connection --------------------------------------------------------------

    def require_connected(self) -> None:
        if self.store is None:
            raise NotConnectedError("no data source connected")

    def run_active(self) -> bool:
        return self._run_thread is not None and self._run_thread.is_alive()

    def connect_datasource(self, profile: ConnectionProfile,
                           questions_path: Optional[str] = None) -> dict:
        with self._lifecycle:
            if self.run_active():
                raise InvalidTransitionError("cannot connect while a run is active")
            if self.connector is not None:
                self.connector.close()
            self.connector = SqliteConnector(profile, timer=self._timer)
            tables = topological_table_order(self.connector.introspect())
            self.store = StateStore(timeout_ceiling_ms=profile.statement_timeout_ms)
            for meta in tables:
                self.store.apply(PendingEvent(
                    EventKind.TABLE_ADDED, ContextScope.table(meta.table_id), meta))
            self.engine = MetricsEngine(clock=self._clock)
            self.engine.register_builtins()
            self.registry = build_default_registry(self.engine)
            self.version_store = VersionStore(
                os.path.join(self.store_dir, "versions"), clock=self._clock)
            self.orchestrator = Orchestrator(
                self.store, self.engine, self.registry, BaselineToolExecutor(),
                self.connector, self.version_store, emit=self.bus.emit)
            ingested = 0
            if questions_path:
                ingested = self._ingest_questions(questions_path)
            self.engine.recalculate_all(self.store.snapshot())
            snapshot = self.store.snapshot()
            summary = {
                "tables": len(snapshot.tables),
                "columns": sum(len(t.columns) for t in snapshot.tables.values()),
                "questions": len(snapshot.questions),
                "predefined_ingested": ingested,
                "location": profile.location,
            }
            self.bus.emit("MetricUpdated", {
                "values": [self._value_dict(v) for v in self.engine.latest_values()]})
            return summary

    def _ingest_questions(self, path: str) -> int:
        assert self.store is not None
        count = 0
        for item in load_questions_file(path):
            snapshot = self.store.snapshot()
            qid = f"q{_next_question_number(snapshot):04d}"
            if "targets" in item:
                targets = tuple(
                    SchemaTarget(t["table"], t.get("column")) for t in item["targets"])
            else:
                targets = derive_targets(snapshot, item["text"])
            question = Question(qid, item["text"], QuestionOrigin.PREDEFINED,
                                None, targets)
            self.store.apply(PendingEvent(
                EventKind.QUESTION_ADDED, ContextScope.question(qid), question))
            count += 1
        return count

    # -- contract -------------------------------------------------------------------

    def put_contract(self, entries: list[ContractEntry]) -> GapVector:
        self.require_connected()
        assert self.engine is not None and self.store is not None
        validated = self.engine.validate_contract(entries)
        self.store.apply(PendingEvent(
            EventKind.CONTRACT_CHANGED, ContextScope.database(), validated))
        gap = self.engine.gap(validated, self.store.snapshot())
        self.bus.emit("MetricUpdated", {"contract_changed": True,
                                        "gaps": gap.to_payload()})
        return gap

    @property
    def contract(self) -> tuple[ContractEntry, ...]:
        if self.store is None:
            return ()
        return self.store.snapshot().contract

    # -- run control ----------------------------------------------------------------

    def _run_config(self, overrides: dict) -> RunConfig:
        contract = self.contract
        if not contract:
            raise ValidationError("set a contract before starting a run")
        return RunConfig(
            contract=contract,
            max_iterations=int(overrides.get("max_iterations", 25)),
            approval_mode=overrides.get("approval_mode", "auto"),
            seed=int(overrides.get("seed", 0)),
        )

    def start_run(self, overrides: Optional[dict] = None) -> dict:
        self.require_connected()
        assert self.orchestrator is not None
        with self._lifecycle:
            if self.run_active():
                raise InvalidTransitionError("a run is already active")
            config = self._run_config(overrides or {})
            orchestrator = self.orchestrator

            def _run():
                self._last_report = orchestrator.run_loop(config)

            self.orchestrator.request_resume()
            self._run_thread = threading.Thread(target=_run, daemon=True,
                                                name="dataprod-run")
            self._run_thread.start()
            return {"phase": "running", "max_iterations": config.max_iterations,
                    "approval_mode": config.approval_mode}

    def pause_run(self) -> dict:
        self._require_run("pause")
        assert self.orchestrator is not None
        self.orchestrator.request_pause()
        return {"phase": "pausing"}

    def resume_run(self) -> dict:
        self._require_run("resume")
        assert self.orchestrator is not None
        self.orchestrator.request_resume()
        return {"phase": "running"}

    def stop_run(self) -> dict:
        self._require_run("stop")
        assert self.orchestrator is not None
        self.orchestrator.request_stop()
        self.orchestrator.request_resume()
        if self._run_thread is not None:
            self._run_thread.join(timeout=30)
        return {"phase": self.orchestrator.phase}

    def _require_run(self, action: str) -> None:
        self.require_connected()
        if not self.run_active():
            raise InvalidTransitionError(f"cannot {action}: no run is active")

    def step_run(self, overrides: Optional[dict] = None) -> dict:
        self.require_connected()
        assert self.orchestrator is not None
        if self.run_active():
            raise InvalidTransitionError("cannot step while an auto run is active")
        outcome = self.orchestrator.step(self._run_config(overrides or {}))
        return {
            "record": outcome.record.to_dict() if outcome.record else None,
            "verdict": outcome.verdict,
            "reason": outcome.reason,
        }

    def run_headless(self, overrides: Optional[dict] = None) -> RunReport:
        """Synchronous full run (the CLI path)."""
        self.require_connected()
        assert self.orchestrator is not None
        if self.run_active():
            raise InvalidTransitionError("a run is already active")
        config = self._run_config(overrides or {})
        report = self.orchestrator.run_loop(config)
        self._last_report = report
        return report

    @property
    def last_report(self) -> Optional[RunReport]:
        return self._last_report

    def phase(self) -> str:
        if self.orchestrator is None:
            return "disconnected"
        if self.run_active():
            return self.orchestrator.phase
        return self.orchestrator.phase if self.orchestrator.phase == "terminated" else "idle"

    # -- payload helpers ---------------------------------------------------------------

    @staticmethod
    def _value_dict(value) -> dict:
        return {"metric_id": value.metric_id, "scope": value.scope.key(),
                "value": value.value, "computed_at_version": value.computed_at_version,
                "iteration": value.iteration}

    def metrics_payload(self, scope: Optional[str] = None) -> dict:
        self.require_connected()
        assert self.engine is not None and self.store is not None
        values = [self._value_dict(v) for v in self.engine.latest_values()
                  if scope is None or v.scope.key() == scope]
        payload: dict = {"values": values, "state_version": self.store.snapshot().version}
        contract = self.contract
        if contract:
            payload["gaps"] = self.engine.gap(
                contract, self.store.snapshot()).to_payload()
        return payload

    def metric_history_payload(self, metric_id: str) -> dict:
        self.require_connected()
        assert self.engine is not None
        series = [
            {"iteration": v.iteration, "scope": v.scope.key(), "value": v.value,
             "computed_at_version": v.computed_at_version, "timestamp": ts}
            for v, ts in self.engine.history(metric_id)
        ]
        return {"metric_id": metric_id, "series": series}

    def state_payload(self) -> dict:
        self.require_connected()
        assert self.store is not None
        snapshot = self.store.snapshot()
        return {
            "version": snapshot.version,
            "tables": [
                {"table_id": t.table_id, "name": t.name,
                 "columns": [c.name for c in t.columns],
                 "row_count_estimate": t.row_count_estimate}
                for t in snapshot.tables.values()
            ],
            "question_count": len(snapshot.questions),
            "questions_with_sql": len(snapshot.questions_with_sql()),
            "view_count": len(snapshot.views),
            "topic_count": len(set(snapshot.topics.values())),
            "event_count": len(snapshot.event_log),
            "phase": self.phase(),
        }

    def questions_payload(self) -> list[dict]:
        self.require_connected()
        assert self.store is not None
        snapshot = self.store.snapshot()
        out = []
        for qid in sorted(snapshot.questions):
            question = snapshot.questions[qid]
            latest = snapshot.latest_query(qid)
            answer = snapshot.latest_answer(qid)
            out.append({
                "question_id": qid,
                "text": question.text,
                "origin": question.origin.value,
                "parent_question": question.parent_question,
                "topic": snapshot.topics.get(qid),
                "sql": latest.sql_text if latest else None,
                "version_no": latest.version_no if latest else None,
                "exec_ms": latest.exec_ms if latest else None,
                "confidence": answer.confidence if answer else None,
            })
        return out

    def topics_payload(self) -> list[dict]:
        self.require_connected()
        assert self.store is not None
        snapshot = self.store.snapshot()
        groups: dict[str, list[str]] = {}
        for qid, label in sorted(snapshot.topics.items()):
            groups.setdefault(label, []).append(qid)
        return [{"topic": label, "question_ids": qids}
                for label, qids in sorted(groups.items())]

    def commits_payload(self) -> list[dict]:
        self.require_connected()
        assert self.version_store is not None
        return [
            {"commit_id": c.commit_id, "parent_id": c.parent_id, "author": c.author,
             "timestamp": c.timestamp, "message": c.message,
             "artifacts": [p.name for p in c.payloads]}
            for c in self.version_store.log()
        ]

    def journal_payload(self) -> list[dict]:
        self.require_connected()
        assert self.orchestrator is not None
        records = []
        path = self.orchestrator.journal_path
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        records.append(json.loads(line))
        return records

    def approvals_payload(self) -> list[dict]:
        self.require_connected()
        assert self.orchestrator is not None
        pending = self.orchestrator.gate.pending()
        return [pending] if pending else []

    def tools_payload(self) -> list[dict]:
        self.require_connected()
        assert self.registry is not None and self.store is not None
        snapshot = self.store.snapshot()
        catalog = self.registry.catalog()
        applicable = {t.name for t in self.registry.applicable_tools(snapshot)}
        for entry in catalog:
            entry["applicable"] = entry["name"] in applicable
            entry["failed_preconditions"] = [
                rule.describe() for rule
                in self.registry.failed_preconditions(snapshot, entry["name"])
            ]
        return catalog

    def close(self) -> None:
        if self.run_active():
            self.stop_run()
        if self.connector is not None:
            self.connector.close()
