"""Event-sourced data product state.

The ``DataProductState`` snapshot is the single source of truth: schema
metadata, questions, query/answer version chains, views, topic assignments,
the active contract, and the append-only event log that produced all of it.

Snapshots are immutable. ``apply_event`` returns a fresh snapshot with the
event appended; replaying the full log from an empty state reproduces the
live state exactly, which is what makes the "source of truth" claim testable.

Writers are serialized through ``StateStore``; readers share snapshots freely.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterator, Optional

from .errors import (
    DanglingReferenceError,
    DuplicateIdentifierError,
    UnknownQuestionError,
    ValidationError,
)

STATE_DOCUMENT_SCHEMA = "dataprod-state/1"

DEFAULT_TIMEOUT_CEILING_MS = 5000


class DataKind(str, Enum):
    NUMERIC = "numeric"
    TEXT = "text"
    TEMPORAL = "temporal"
    BOOLEAN = "boolean"
    OTHER = "other"


class QuestionOrigin(str, Enum):
    PREDEFINED = "predefined"
    GENERATED = "generated"
    FOLLOWUP = "followup"
    HUMAN = "human"


class EventKind(str, Enum):
    TABLE_ADDED = "TableAdded"
    QUESTION_ADDED = "QuestionAdded"
    QUERY_VERSION_ADDED = "QueryVersionAdded"
    ANSWER_RECORDED = "AnswerRecorded"
    VIEW_ADDED = "ViewAdded"
    TOPIC_ASSIGNED = "TopicAssigned"
    CONTRACT_CHANGED = "ContractChanged"


class ScopeLevel(str, Enum):
    DATABASE = "database"
    TABLE = "table"
    QUESTION = "question"


@dataclass(frozen=True)
class ContextScope:
    """Granularity marker: the whole database, one table, or one question."""

    level: ScopeLevel
    ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.level is not ScopeLevel.DATABASE and not self.ids:
            raise ValidationError("non-database scope requires ids")

    def key(self) -> str:
        if self.level is ScopeLevel.DATABASE:
            return "database"
        return f"{self.level.value}:{','.join(self.ids)}"

    @staticmethod
    def database() -> "ContextScope":
        return ContextScope(ScopeLevel.DATABASE)

    @staticmethod
    def table(table_id: str) -> "ContextScope":
        return ContextScope(ScopeLevel.TABLE, (table_id,))

    @staticmethod
    def question(question_id: str) -> "ContextScope":
        return ContextScope(ScopeLevel.QUESTION, (question_id,))


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    data_kind: DataKind
    nullable: bool = True


@dataclass(frozen=True)
class ForeignKey:
    local_column: str
    remote_table: str  # table_id
    remote_column: str


@dataclass(frozen=True)
class TableMeta:
    table_id: str
    name: str
    columns: tuple[ColumnMeta, ...]
    row_count_estimate: int = 0
    foreign_keys: tuple[ForeignKey, ...] = ()

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> Optional[ColumnMeta]:
        lowered = name.lower()
        for c in self.columns:
            if c.name.lower() == lowered:
                return c
        return None


@dataclass(frozen=True)
class SchemaTarget:
    table_id: str
    column: Optional[str] = None


@dataclass(frozen=True)
class Question:
    question_id: str
    text: str
    origin: QuestionOrigin
    parent_question: Optional[str] = None
    schema_targets: tuple[SchemaTarget, ...] = ()


@dataclass(frozen=True)
class QueryAnalysis:
    """Structural features of one SQL statement, resolved against the schema.

    ``referenced_tables``/``referenced_columns`` are base-table references:
    anything reached through a view is expanded to the underlying tables and
    columns so coverage metrics see the real schema footprint.
    """

    referenced_tables: frozenset[str]
    referenced_columns: frozenset[tuple[str, str]]
    token_count: int
    join_count: int
    subquery_depth: int
    aggregate_count: int
    has_group_by: bool
    has_having: bool
    set_op_count: int
    join_pattern_key: str


@dataclass(frozen=True)
class QueryVersion:
    question_id: str
    version_no: int
    sql_text: str
    created_by: str
    analysis: QueryAnalysis
    exec_ms: Optional[float] = None
    timed_out: bool = False


@dataclass(frozen=True)
class AnswerVersion:
    question_id: str
    version_no: int
    payload_digest: str
    confidence: float


@dataclass(frozen=True)
class ViewDef:
    view_id: str
    name: str
    sql_text: str
    covers_pattern: str
    created_at_iteration: int


@dataclass(frozen=True)
class TopicAssignment:
    question_id: str
    topic_label: str


@dataclass(frozen=True)
class ContractEntry:
    metric_id: str
    target: float
    comparator: str  # ">=" or "<="


Payload = Any  # one of the artifact dataclasses above, or tuple[ContractEntry, ...]


@dataclass(frozen=True)
class PendingEvent:
    """An event intent produced by a tool or the API, before the store
    assigns it an id."""

    kind: EventKind
    scope: ContextScope
    payload: Payload


@dataclass(frozen=True)
class StateEvent:
    event_id: int
    kind: EventKind
    scope: ContextScope
    payload: Payload


@dataclass(frozen=True)
class DataProductState:
    """Immutable snapshot of one data product."""

    tables: dict[str, TableMeta] = field(default_factory=dict)
    questions: dict[str, Question] = field(default_factory=dict)
    query_versions: dict[str, tuple[QueryVersion, ...]] = field(default_factory=dict)
    answers: dict[str, tuple[AnswerVersion, ...]] = field(default_factory=dict)
    views: dict[str, ViewDef] = field(default_factory=dict)
    topics: dict[str, str] = field(default_factory=dict)
    contract: tuple[ContractEntry, ...] = ()
    event_log: tuple[StateEvent, ...] = ()
    timeout_ceiling_ms: int = DEFAULT_TIMEOUT_CEILING_MS

    @property
    def version(self) -> int:
        return len(self.event_log)

    # -- read helpers ------------------------------------------------------

    def table_by_name(self, name: str) -> Optional[TableMeta]:
        lowered = name.lower()
        for t in self.tables.values():
            if t.name.lower() == lowered:
                return t
        return None

    def latest_query(self, question_id: str) -> Optional[QueryVersion]:
        if question_id not in self.questions:
            raise UnknownQuestionError(f"unknown question {question_id!r}")
        versions = self.query_versions.get(question_id, ())
        return versions[-1] if versions else None

    def latest_answer(self, question_id: str) -> Optional[AnswerVersion]:
        versions = self.answers.get(question_id, ())
        return versions[-1] if versions else None

    def latest_queries(self) -> Iterator[QueryVersion]:
        """Latest version per question, in question-id order."""
        for qid in sorted(self.questions):
            versions = self.query_versions.get(qid, ())
            if versions:
                yield versions[-1]

    def questions_with_sql(self) -> list[str]:
        return [qid for qid in sorted(self.questions) if self.query_versions.get(qid)]

    def questions_without_sql(self) -> list[str]:
        return [qid for qid in sorted(self.questions) if not self.query_versions.get(qid)]

    def view_by_name(self, name: str) -> Optional[ViewDef]:
        lowered = name.lower()
        for v in self.views.values():
            if v.name.lower() == lowered:
                return v
        return None


def snapshot(state: DataProductState) -> DataProductState:
    """Immutable read view of the state.

    States are already immutable value objects, so the snapshot *is* the
    state; the function exists so call sites read as intended.
    """
    return state


# --- event application ----------------------------------------------------

def _require(condition: bool, error: type, message: str) -> None:
    if not condition:
        raise error(message)


def _validate_table(state: DataProductState, table: TableMeta) -> None:
    _require(table.table_id not in state.tables, DuplicateIdentifierError,
             f"table id {table.table_id!r} already exists")
    _require(state.table_by_name(table.name) is None, DuplicateIdentifierError,
             f"table name {table.name!r} already exists")
    names = [c.name.lower() for c in table.columns]
    _require(len(names) == len(set(names)), DuplicateIdentifierError,
             f"duplicate column names in table {table.name!r}")
    _require(table.row_count_estimate >= 0, ValidationError, "negative row count")
    for fk in table.foreign_keys:
        remote = state.tables.get(fk.remote_table)
        if remote is None and fk.remote_table == table.table_id:
            remote = table  # self-reference
        _require(remote is not None, DanglingReferenceError,
                 f"foreign key references unknown table {fk.remote_table!r}")
        assert remote is not None
        _require(remote.column(fk.remote_column) is not None, DanglingReferenceError,
                 f"foreign key references unknown column {fk.remote_table}.{fk.remote_column}")
        _require(table.column(fk.local_column) is not None, DanglingReferenceError,
                 f"foreign key local column {fk.local_column!r} missing")


def _validate_targets(state: DataProductState, targets: tuple[SchemaTarget, ...]) -> None:
    for target in targets:
        table = state.tables.get(target.table_id)
        _require(table is not None, DanglingReferenceError,
                 f"schema target references unknown table {target.table_id!r}")
        assert table is not None
        if target.column is not None:
            _require(table.column(target.column) is not None, DanglingReferenceError,
                     f"schema target references unknown column "
                     f"{target.table_id}.{target.column}")


def _validate_question(state: DataProductState, q: Question) -> None:
    _require(q.question_id not in state.questions, DuplicateIdentifierError,
             f"question id {q.question_id!r} already exists")
    if q.origin is QuestionOrigin.FOLLOWUP:
        _require(q.parent_question is not None, ValidationError,
                 "followup question requires parent_question")
        _require(q.parent_question in state.questions, DanglingReferenceError,
                 f"parent question {q.parent_question!r} unknown")
    else:
        _require(q.parent_question is None, ValidationError,
                 "parent_question is only valid for followup questions")
    _validate_targets(state, q.schema_targets)


def apply_event(state: DataProductState, event: StateEvent) -> DataProductState:
    """Append one event, returning the next snapshot.

    Raises DanglingReferenceError / DuplicateIdentifierError when the payload
    names entities the state does not know about (other than the entity the
    event itself introduces).
    """
    _require(event.event_id == state.version + 1, ValidationError,
             f"event id {event.event_id} does not extend version {state.version}")
    kind, payload = event.kind, event.payload

    if kind is EventKind.TABLE_ADDED:
        _validate_table(state, payload)
        tables = dict(state.tables)
        tables[payload.table_id] = payload
        new = replace(state, tables=tables)

    elif kind is EventKind.QUESTION_ADDED:
        _validate_question(state, payload)
        questions = dict(state.questions)
        questions[payload.question_id] = payload
        new = replace(state, questions=questions)

    elif kind is EventKind.QUERY_VERSION_ADDED:
        qid = payload.question_id
        _require(qid in state.questions, DanglingReferenceError,
                 f"query version for unknown question {qid!r}")
        existing = state.query_versions.get(qid, ())
        _require(payload.version_no == len(existing) + 1, ValidationError,
                 f"query version {payload.version_no} for {qid!r} is not "
                 f"the next in sequence ({len(existing) + 1})")
        versions = dict(state.query_versions)
        versions[qid] = existing + (payload,)
        new = replace(state, query_versions=versions)

    elif kind is EventKind.ANSWER_RECORDED:
        qid = payload.question_id
        _require(qid in state.questions, DanglingReferenceError,
                 f"answer for unknown question {qid!r}")
        _require(0.0 <= payload.confidence <= 1.0, ValidationError,
                 "confidence outside [0, 1]")
        existing = state.answers.get(qid, ())
        _require(payload.version_no == len(existing) + 1, ValidationError,
                 f"answer version {payload.version_no} for {qid!r} is not "
                 f"the next in sequence ({len(existing) + 1})")
        answers = dict(state.answers)
        answers[qid] = existing + (payload,)
        new = replace(state, answers=answers)

    elif kind is EventKind.VIEW_ADDED:
        _require(payload.view_id not in state.views, DuplicateIdentifierError,
                 f"view id {payload.view_id!r} already exists")
        _require(state.view_by_name(payload.name) is None, DuplicateIdentifierError,
                 f"view name {payload.name!r} already exists")
        _require(state.table_by_name(payload.name) is None, DuplicateIdentifierError,
                 f"view name {payload.name!r} collides with a table")
        views = dict(state.views)
        views[payload.view_id] = payload
        new = replace(state, views=views)

    elif kind is EventKind.TOPIC_ASSIGNED:
        _require(payload.question_id in state.questions, DanglingReferenceError,
                 f"topic for unknown question {payload.question_id!r}")
        topics = dict(state.topics)
        topics[payload.question_id] = payload.topic_label
        new = replace(state, topics=topics)

    elif kind is EventKind.CONTRACT_CHANGED:
        entries = tuple(payload)
        seen = set()
        for entry in entries:
            _require(entry.metric_id not in seen, DuplicateIdentifierError,
                     f"duplicate contract entry for {entry.metric_id!r}")
            seen.add(entry.metric_id)
        new = replace(state, contract=entries)

    else:  # pragma: no cover - enum is exhaustive
        raise ValidationError(f"unhandled event kind {kind}")

    return replace(new, event_log=state.event_log + (event,))


def replay(events: Iterator[StateEvent] | tuple[StateEvent, ...],
           timeout_ceiling_ms: int = DEFAULT_TIMEOUT_CEILING_MS) -> DataProductState:
    """Rebuild a state from scratch by folding the event log."""
    state = DataProductState(timeout_ceiling_ms=timeout_ceiling_ms)
    for event in events:
        state = apply_event(state, event)
    return state


class StateStore:
    """Holds the live snapshot and serializes writers.

    Any number of threads may read ``state`` concurrently; all mutation goes
    through ``apply``, which assigns the next event id under a lock.
    """

    def __init__(self, timeout_ceiling_ms: int = DEFAULT_TIMEOUT_CEILING_MS):
        self._lock = threading.Lock()
        self._state = DataProductState(timeout_ceiling_ms=timeout_ceiling_ms)

    @property
    def state(self) -> DataProductState:
        return self._state

    def snapshot(self) -> DataProductState:
        return self._state

    def apply(self, pending: PendingEvent) -> StateEvent:
        with self._lock:
            event = StateEvent(
                event_id=self._state.version + 1,
                kind=pending.kind,
                scope=pending.scope,
                payload=pending.payload,
            )
            self._state = apply_event(self._state, event)
            return event


# --- export / import ------------------------------------------------------
#
# The export format is the event log itself (plus the store configuration),
# so imports rebuild the state through apply_event and inherit every
# validation rule.

def _scope_to_dict(scope: ContextScope) -> dict:
    return {"level": scope.level.value, "ids": list(scope.ids)}


def _scope_from_dict(d: dict) -> ContextScope:
    return ContextScope(ScopeLevel(d["level"]), tuple(d["ids"]))


def _analysis_to_dict(a: QueryAnalysis) -> dict:
    return {
        "referenced_tables": sorted(a.referenced_tables),
        "referenced_columns": sorted(list(c) for c in a.referenced_columns),
        "token_count": a.token_count,
        "join_count": a.join_count,
        "subquery_depth": a.subquery_depth,
        "aggregate_count": a.aggregate_count,
        "has_group_by": a.has_group_by,
        "has_having": a.has_having,
        "set_op_count": a.set_op_count,
        "join_pattern_key": a.join_pattern_key,
    }


def _analysis_from_dict(d: dict) -> QueryAnalysis:
    return QueryAnalysis(
        referenced_tables=frozenset(d["referenced_tables"]),
        referenced_columns=frozenset((t, c) for t, c in d["referenced_columns"]),
        token_count=d["token_count"],
        join_count=d["join_count"],
        subquery_depth=d["subquery_depth"],
        aggregate_count=d["aggregate_count"],
        has_group_by=d["has_group_by"],
        has_having=d["has_having"],
        set_op_count=d["set_op_count"],
        join_pattern_key=d["join_pattern_key"],
    )


def _payload_to_dict(kind: EventKind, payload: Payload) -> dict:
    if kind is EventKind.TABLE_ADDED:
        return {
            "table_id": payload.table_id,
            "name": payload.name,
            "columns": [
                {"name": c.name, "data_kind": c.data_kind.value, "nullable": c.nullable}
                for c in payload.columns
            ],
            "row_count_estimate": payload.row_count_estimate,
            "foreign_keys": [
                {"local_column": fk.local_column, "remote_table": fk.remote_table,
                 "remote_column": fk.remote_column}
                for fk in payload.foreign_keys
            ],
        }
    if kind is EventKind.QUESTION_ADDED:
        return {
            "question_id": payload.question_id,
            "text": payload.text,
            "origin": payload.origin.value,
            "parent_question": payload.parent_question,
            "schema_targets": [
                {"table_id": t.table_id, "column": t.column}
                for t in payload.schema_targets
            ],
        }
    if kind is EventKind.QUERY_VERSION_ADDED:
        return {
            "question_id": payload.question_id,
            "version_no": payload.version_no,
            "sql_text": payload.sql_text,
            "created_by": payload.created_by,
            "analysis": _analysis_to_dict(payload.analysis),
            "exec_ms": payload.exec_ms,
            "timed_out": payload.timed_out,
        }
    if kind is EventKind.ANSWER_RECORDED:
        return {
            "question_id": payload.question_id,
            "version_no": payload.version_no,
            "payload_digest": payload.payload_digest,
            "confidence": payload.confidence,
        }
    if kind is EventKind.VIEW_ADDED:
        return {
            "view_id": payload.view_id,
            "name": payload.name,
            "sql_text": payload.sql_text,
            "covers_pattern": payload.covers_pattern,
            "created_at_iteration": payload.created_at_iteration,
        }
    if kind is EventKind.TOPIC_ASSIGNED:
        return {"question_id": payload.question_id, "topic_label": payload.topic_label}
    if kind is EventKind.CONTRACT_CHANGED:
        return {
            "entries": [
                {"metric_id": e.metric_id, "target": e.target, "comparator": e.comparator}
                for e in payload
            ]
        }
    raise ValidationError(f"unhandled event kind {kind}")  # pragma: no cover


def _payload_from_dict(kind: EventKind, d: dict) -> Payload:
    if kind is EventKind.TABLE_ADDED:
        return TableMeta(
            table_id=d["table_id"],
            name=d["name"],
            columns=tuple(
                ColumnMeta(c["name"], DataKind(c["data_kind"]), c["nullable"])
                for c in d["columns"]
            ),
            row_count_estimate=d["row_count_estimate"],
            foreign_keys=tuple(
                ForeignKey(fk["local_column"], fk["remote_table"], fk["remote_column"])
                for fk in d["foreign_keys"]
            ),
        )
    if kind is EventKind.QUESTION_ADDED:
        return Question(
            question_id=d["question_id"],
            text=d["text"],
            origin=QuestionOrigin(d["origin"]),
            parent_question=d["parent_question"],
            schema_targets=tuple(
                SchemaTarget(t["table_id"], t["column"]) for t in d["schema_targets"]
            ),
        )
    if kind is EventKind.QUERY_VERSION_ADDED:
        return QueryVersion(
            question_id=d["question_id"],
            version_no=d["version_no"],
            sql_text=d["sql_text"],
            created_by=d["created_by"],
            analysis=_analysis_from_dict(d["analysis"]),
            exec_ms=d["exec_ms"],
            timed_out=d["timed_out"],
        )
    if kind is EventKind.ANSWER_RECORDED:
        return AnswerVersion(d["question_id"], d["version_no"],
                             d["payload_digest"], d["confidence"])
    if kind is EventKind.VIEW_ADDED:
        return ViewDef(d["view_id"], d["name"], d["sql_text"],
                       d["covers_pattern"], d["created_at_iteration"])
    if kind is EventKind.TOPIC_ASSIGNED:
        return TopicAssignment(d["question_id"], d["topic_label"])
    if kind is EventKind.CONTRACT_CHANGED:
        return tuple(
            ContractEntry(e["metric_id"], e["target"], e["comparator"])
            for e in d["entries"]
        )
    raise ValidationError(f"unhandled event kind {kind}")  # pragma: no cover


def event_to_dict(event: StateEvent) -> dict:
    return {
        "event_id": event.event_id,
        "kind": event.kind.value,
        "scope": _scope_to_dict(event.scope),
        "payload": _payload_to_dict(event.kind, event.payload),
    }


def event_from_dict(d: dict) -> StateEvent:
    kind = EventKind(d["kind"])
    return StateEvent(
        event_id=d["event_id"],
        kind=kind,
        scope=_scope_from_dict(d["scope"]),
        payload=_payload_from_dict(kind, d["payload"]),
    )


def export_document(state: DataProductState) -> str:
    """Serialize the state as one self-describing JSON document."""
    doc = {
        "schema": STATE_DOCUMENT_SCHEMA,
        "timeout_ceiling_ms": state.timeout_ceiling_ms,
        "events": [event_to_dict(e) for e in state.event_log],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def import_document(text: str) -> DataProductState:
    doc = json.loads(text)
    if doc.get("schema") != STATE_DOCUMENT_SCHEMA:
        raise ValidationError(f"unsupported state document schema {doc.get('schema')!r}")
    events = [event_from_dict(d) for d in doc["events"]]
    return replay(events, timeout_ceiling_ms=doc["timeout_ceiling_ms"])
