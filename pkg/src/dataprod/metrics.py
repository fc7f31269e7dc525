"""Quality metrics: definitions, event-driven recalculation, contract gaps.

Metrics declare which state facets they depend on; ``resolve_contexts`` maps
each state event to the minimal set of (metric, scope) pairs that must be
recomputed, and ``recalculate`` refreshes exactly those. Table-scoped metrics
that also report a database-level aggregate (column coverage) propagate
upward inside the same recalculation, which is what keeps a table-level
invalidation sufficient when a new table appears.

A metric value of ``None`` means "unknown" (nothing measured yet); unknown
values count as a fully unmet contract entry (gap 1.0), which pushes the
planner toward tools that produce measurements.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Optional

from .errors import (
    DuplicateMetricError,
    MissingValueError,
    UnknownMetricError,
    ValidationError,
)
from .sqlanalyzer import complexity_score
from .state import (
    ContextScope,
    ContractEntry,
    DataProductState,
    EventKind,
    ScopeLevel,
    StateEvent,
)

FACETS = ("tables", "questions", "query_versions", "answers", "views")

_EVENT_FACET = {
    EventKind.TABLE_ADDED: "tables",
    EventKind.QUESTION_ADDED: "questions",
    EventKind.QUERY_VERSION_ADDED: "query_versions",
    EventKind.ANSWER_RECORDED: "answers",
    EventKind.VIEW_ADDED: "views",
    EventKind.TOPIC_ASSIGNED: None,
    EventKind.CONTRACT_CHANGED: None,
}


class Direction(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


ComputeFn = Callable[[DataProductState, ContextScope], Optional[float]]


@dataclass(frozen=True)
class MetricDefinition:
    metric_id: str
    scope_level: ScopeLevel
    direction: Direction
    unit: str
    depends_on: frozenset
    compute: ComputeFn
    db_rollup: bool = False  # table-scoped metric that also reports a db aggregate

    def __post_init__(self):
        if not self.depends_on:
            raise ValidationError(f"metric {self.metric_id!r} must depend on a facet")
        unknown = set(self.depends_on) - set(FACETS)
        if unknown:
            raise ValidationError(f"metric {self.metric_id!r} has unknown facets {unknown}")


@dataclass(frozen=True)
class MetricValue:
    metric_id: str
    scope: ContextScope
    value: Optional[float]
    computed_at_version: int
    iteration: int


@dataclass(frozen=True)
class GapEntry:
    metric_id: str
    target: float
    comparator: str
    value: Optional[float]
    normalized_gap: float


@dataclass(frozen=True)
class GapVector:
    entries: tuple[GapEntry, ...]

    @property
    def total_gap(self) -> float:
        return sum(e.normalized_gap for e in self.entries)

    def by_metric(self) -> dict[str, float]:
        return {e.metric_id: e.normalized_gap for e in self.entries}

    def to_payload(self) -> dict:
        return {
            "total_gap": self.total_gap,
            "entries": [
                {"metric_id": e.metric_id, "target": e.target,
                 "comparator": e.comparator, "value": e.value,
                 "normalized_gap": e.normalized_gap,
                 "met": e.normalized_gap == 0.0}
                for e in self.entries
            ],
        }


def normalized_gap(direction: Direction, target: float, value: Optional[float]) -> float:
    """Shortfall from target, scaled by the target and clamped to [0, 1]."""
    if value is None:
        return 1.0
    if direction is Direction.MAXIMIZE:
        if target <= 0:
            return 0.0
        return min(1.0, max(0.0, (target - value) / target))
    return min(1.0, max(0.0, (value - target) / target))


# --- built-in metric computations -------------------------------------------

def _covered_tables(state: DataProductState) -> set[str]:
    covered: set[str] = set()
    for qv in state.latest_queries():
        covered.update(qv.analysis.referenced_tables)
    return covered & set(state.tables)


def _covered_columns(state: DataProductState) -> set[tuple[str, str]]:
    covered: set[tuple[str, str]] = set()
    for qv in state.latest_queries():
        covered.update(qv.analysis.referenced_columns)
    return covered


def compute_table_coverage(state: DataProductState, scope: ContextScope) -> Optional[float]:
    if not state.tables:
        return None
    return len(_covered_tables(state)) / len(state.tables)


def _column_counts(state: DataProductState, table_id: str) -> tuple[int, int]:
    table = state.tables[table_id]
    total = len(table.columns)
    names = {c.name for c in table.columns}
    covered = {
        col for tid, col in _covered_columns(state)
        if tid == table_id and col in names
    }
    return len(covered), total


def compute_column_coverage(state: DataProductState, scope: ContextScope) -> Optional[float]:
    if scope.level is ScopeLevel.TABLE:
        table_id = scope.ids[0]
        if table_id not in state.tables:
            return None
        covered, total = _column_counts(state, table_id)
        return covered / total if total else None
    # database scope: global ratio over all tables
    covered_sum = total_sum = 0
    for table_id in state.tables:
        covered, total = _column_counts(state, table_id)
        covered_sum += covered
        total_sum += total
    return covered_sum / total_sum if total_sum else None


def compute_question_count(state: DataProductState, scope: ContextScope) -> float:
    return float(len(state.questions))


def compute_avg_query_length(state: DataProductState, scope: ContextScope) -> Optional[float]:
    counts = [qv.analysis.token_count for qv in state.latest_queries()]
    return sum(counts) / len(counts) if counts else None


def compute_avg_query_complexity(state: DataProductState, scope: ContextScope) -> Optional[float]:
    scores = [complexity_score(qv.analysis) for qv in state.latest_queries()]
    return sum(scores) / len(scores) if scores else None


def compute_avg_exec_speed(state: DataProductState, scope: ContextScope) -> Optional[float]:
    samples = []
    for qv in state.latest_queries():
        if qv.timed_out:
            samples.append(float(state.timeout_ceiling_ms))
        elif qv.exec_ms is not None:
            samples.append(qv.exec_ms)
    return sum(samples) / len(samples) if samples else None


def builtin_metrics() -> list[MetricDefinition]:
    return [
        MetricDefinition(
            "table_coverage", ScopeLevel.DATABASE, Direction.MAXIMIZE, "ratio",
            frozenset({"tables", "query_versions"}), compute_table_coverage),
        MetricDefinition(
            "column_coverage", ScopeLevel.TABLE, Direction.MAXIMIZE, "ratio",
            frozenset({"tables", "query_versions"}), compute_column_coverage,
            db_rollup=True),
        MetricDefinition(
            "question_count", ScopeLevel.DATABASE, Direction.MAXIMIZE, "count",
            frozenset({"questions"}), compute_question_count),
        MetricDefinition(
            "avg_query_length", ScopeLevel.DATABASE, Direction.MINIMIZE, "tokens",
            frozenset({"query_versions"}), compute_avg_query_length),
        MetricDefinition(
            "avg_query_complexity", ScopeLevel.DATABASE, Direction.MINIMIZE, "score",
            frozenset({"query_versions"}), compute_avg_query_complexity),
        MetricDefinition(
            "avg_exec_speed", ScopeLevel.DATABASE, Direction.MINIMIZE, "ms",
            frozenset({"query_versions"}), compute_avg_exec_speed),
    ]


# --- engine -------------------------------------------------------------------

def _affected_tables(event: StateEvent, snapshot: DataProductState) -> list[str]:
    kind = event.kind
    if kind is EventKind.TABLE_ADDED:
        return [event.payload.table_id]
    if kind is EventKind.QUERY_VERSION_ADDED:
        affected = set(event.payload.analysis.referenced_tables)
        versions = snapshot.query_versions.get(event.payload.question_id, ())
        if len(versions) >= 2:  # the superseded version stops counting
            affected.update(versions[-2].analysis.referenced_tables)
        return sorted(affected & set(snapshot.tables))
    if kind is EventKind.QUESTION_ADDED:
        return sorted({t.table_id for t in event.payload.schema_targets
                       if t.table_id in snapshot.tables})
    if kind is EventKind.ANSWER_RECORDED:
        versions = snapshot.query_versions.get(event.payload.question_id, ())
        if versions:
            return sorted(set(versions[-1].analysis.referenced_tables)
                          & set(snapshot.tables))
        return []
    return []


def _affected_questions(event: StateEvent) -> list[str]:
    if event.scope.level is ScopeLevel.QUESTION:
        return list(event.scope.ids)
    return []


class MetricsEngine:
    """Registry plus value/history store. Computation is pure over snapshots;
    the store is single-writer (the orchestrator), multi-reader."""

    def __init__(self, clock: Callable[[], float] = time.time):
        self._definitions: dict[str, MetricDefinition] = {}
        self._values: dict[tuple[str, str], MetricValue] = {}
        self._history: list[tuple[MetricValue, float]] = []
        self._clock = clock
        self._lock = threading.Lock()

    # -- registration -----------------------------------------------------

    def register(self, definition: MetricDefinition) -> None:
        if definition.metric_id in self._definitions:
            raise DuplicateMetricError(f"metric {definition.metric_id!r} already registered")
        self._definitions[definition.metric_id] = definition

    def register_builtins(self) -> None:
        for definition in builtin_metrics():
            self.register(definition)

    @property
    def definitions(self) -> dict[str, MetricDefinition]:
        return dict(self._definitions)

    def definition(self, metric_id: str) -> MetricDefinition:
        try:
            return self._definitions[metric_id]
        except KeyError:
            raise UnknownMetricError(f"metric {metric_id!r} not registered") from None

    # -- event-driven recalculation ------------------------------------------

    def resolve_contexts(self, event: StateEvent,
                         snapshot: DataProductState) -> set[tuple[str, ContextScope]]:
        """(metric, scope) pairs whose value the event may have changed.

        ``snapshot`` is the state *after* the event was applied; it is needed
        to find the tables touched by a superseded query version.
        """
        facet = _EVENT_FACET[event.kind]
        if facet is None:
            return set()
        targets: set[tuple[str, ContextScope]] = set()
        for definition in self._definitions.values():
            if facet not in definition.depends_on:
                continue
            if definition.scope_level is ScopeLevel.DATABASE:
                targets.add((definition.metric_id, ContextScope.database()))
            elif definition.scope_level is ScopeLevel.TABLE:
                for table_id in _affected_tables(event, snapshot):
                    targets.add((definition.metric_id, ContextScope.table(table_id)))
            else:
                for qid in _affected_questions(event):
                    targets.add((definition.metric_id, ContextScope.question(qid)))
        return targets

    def recalculate(self, snapshot: DataProductState,
                    targets: Iterable[tuple[str, ContextScope]],
                    iteration: int = 0) -> list[MetricValue]:
        """Recompute exactly the targeted pairs (plus the database aggregate
        of any targeted table-scope rollup metric) and append to history."""
        ordered = sorted(targets, key=lambda t: (t[0], t[1].key()))
        rollups: list[str] = []
        for metric_id, scope in ordered:
            definition = self.definition(metric_id)
            if (definition.db_rollup and scope.level is ScopeLevel.TABLE
                    and metric_id not in rollups):
                rollups.append(metric_id)
        computed: list[MetricValue] = []
        with self._lock:
            for metric_id, scope in ordered:
                computed.append(self._compute_and_store(metric_id, scope, snapshot, iteration))
            targeted = {(m, s.key()) for m, s in ordered}
            for metric_id in rollups:
                if (metric_id, ContextScope.database().key()) not in targeted:
                    computed.append(self._compute_and_store(
                        metric_id, ContextScope.database(), snapshot, iteration))
        return computed

    def _compute_and_store(self, metric_id: str, scope: ContextScope,
                           snapshot: DataProductState, iteration: int) -> MetricValue:
        definition = self.definition(metric_id)
        value = definition.compute(snapshot, scope)
        metric_value = MetricValue(metric_id, scope, value, snapshot.version, iteration)
        self._values[(metric_id, scope.key())] = metric_value
        self._history.append((metric_value, self._clock()))
        return metric_value

    def recalculate_all(self, snapshot: DataProductState, iteration: int = 0) -> list[MetricValue]:
        """Initialize or refresh every registered metric at every scope."""
        targets: list[tuple[str, ContextScope]] = []
        for definition in self._definitions.values():
            if definition.scope_level is ScopeLevel.DATABASE:
                targets.append((definition.metric_id, ContextScope.database()))
            elif definition.scope_level is ScopeLevel.TABLE:
                for table_id in snapshot.tables:
                    targets.append((definition.metric_id, ContextScope.table(table_id)))
            else:
                for qid in snapshot.questions:
                    targets.append((definition.metric_id, ContextScope.question(qid)))
        return self.recalculate(snapshot, targets, iteration)

    # -- reads -----------------------------------------------------------------

    def latest(self, metric_id: str, scope: ContextScope) -> MetricValue:
        self.definition(metric_id)
        try:
            return self._values[(metric_id, scope.key())]
        except KeyError:
            raise MissingValueError(
                f"metric {metric_id!r} has no value at scope {scope.key()!r}") from None

    def latest_values(self) -> list[MetricValue]:
        return sorted(self._values.values(), key=lambda v: (v.metric_id, v.scope.key()))

    def history(self, metric_id: Optional[str] = None) -> list[tuple[MetricValue, float]]:
        if metric_id is None:
            return list(self._history)
        self.definition(metric_id)
        return [(v, ts) for v, ts in self._history if v.metric_id == metric_id]

    def export_history_lines(self) -> str:
        """Line-delimited history: (iteration, metric_id, scope, value, timestamp)."""
        lines = []
        for value, ts in self._history:
            lines.append(json.dumps({
                "iteration": value.iteration,
                "metric_id": value.metric_id,
                "scope": value.scope.key(),
                "value": value.value,
                "timestamp": ts,
            }, sort_keys=True))
        return "\n".join(lines) + ("\n" if lines else "")

    # -- contracts ----------------------------------------------------------------

    def validate_contract(self, entries: Iterable[ContractEntry]) -> tuple[ContractEntry, ...]:
        entries = tuple(entries)
        seen: set[str] = set()
        for entry in entries:
            if entry.metric_id in seen:
                raise ValidationError(f"duplicate contract entry {entry.metric_id!r}")
            seen.add(entry.metric_id)
            definition = self.definition(entry.metric_id)
            if entry.comparator not in (">=", "<="):
                raise ValidationError(f"comparator must be >= or <=, got {entry.comparator!r}")
            expected = ">=" if definition.direction is Direction.MAXIMIZE else "<="
            if entry.comparator != expected:
                raise ValidationError(
                    f"metric {entry.metric_id!r} is {definition.direction.value}; "
                    f"its comparator must be {expected}")
            if definition.unit == "ratio" and not (0.0 <= entry.target <= 1.0):
                raise ValidationError(
                    f"coverage target for {entry.metric_id!r} must be in [0, 1]")
            if definition.direction is Direction.MINIMIZE and entry.target <= 0:
                raise ValidationError(
                    f"target for minimized metric {entry.metric_id!r} must be positive")
        return entries

    def gap(self, contract: Iterable[ContractEntry],
            snapshot: Optional[DataProductState] = None) -> GapVector:
        """Normalized per-entry shortfalls. Contract metrics are evaluated at
        database scope; values missing from the store are computed on demand
        when a snapshot is supplied."""
        gap_entries = []
        for entry in contract:
            definition = self.definition(entry.metric_id)
            scope = ContextScope.database()
            key = (entry.metric_id, scope.key())
            if key not in self._values:
                if snapshot is None:
                    raise MissingValueError(
                        f"metric {entry.metric_id!r} has not been computed yet")
                with self._lock:
                    self._compute_and_store(entry.metric_id, scope, snapshot, 0)
            value = self._values[key].value
            gap_entries.append(GapEntry(
                metric_id=entry.metric_id,
                target=entry.target,
                comparator=entry.comparator,
                value=value,
                normalized_gap=normalized_gap(definition.direction, entry.target, value),
            ))
        return GapVector(tuple(gap_entries))


def oracle_values(definitions: Iterable[MetricDefinition],
                  snapshot: DataProductState) -> dict[tuple[str, str], Optional[float]]:
    """From-scratch recomputation of every metric at every scope, bypassing
    all incremental bookkeeping. Used as the reference in equivalence tests."""
    out: dict[tuple[str, str], Optional[float]] = {}
    for definition in definitions:
        if definition.scope_level is ScopeLevel.DATABASE:
            scopes = [ContextScope.database()]
        elif definition.scope_level is ScopeLevel.TABLE:
            scopes = [ContextScope.table(t) for t in snapshot.tables]
            if definition.db_rollup:
                scopes.append(ContextScope.database())
        else:
            scopes = [ContextScope.question(q) for q in snapshot.questions]
        for scope in scopes:
            out[(definition.metric_id, scope.key())] = definition.compute(snapshot, scope)
    return out
