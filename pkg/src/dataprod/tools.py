"""Deterministic baseline implementations of the five specialized tools.

Generation is template-driven from schema metadata, so every tool is a pure
function of (snapshot, invocation): no LLM calls, no hidden randomness. The
invocation carries a seed for executors that do randomize; the baselines have
no random choices, so they ignore it. ``ToolExecutor`` is the adapter seam
where an LLM-backed executor could be swapped in behind the same
invocation/result contract.

Every emitted SQL statement is validated against the analyzer and executed on
the connected database before it is turned into an event, so 100% of what
lands in the state parses and runs.
"""

from __future__ import annotations

import hashlib
import re
import statistics
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .connector import SqliteConnector
from .errors import (
    NoEligibleQuestionError,
    NoParentAvailableError,
    NoSharedPatternError,
    ParameterBoundsError,
    UnknownToolError,
    ValidationError,
)
from .sqlanalyzer import (
    Comparison,
    FuncCall,
    Literal,
    analyze,
    build_catalog,
    build_join_view_sql,
    parse,
    render_query,
    rewrite_with_view,
)
from .state import (
    AnswerVersion,
    ContextScope,
    DataKind,
    DataProductState,
    EventKind,
    PendingEvent,
    Question,
    QuestionOrigin,
    QueryVersion,
    SchemaTarget,
    TableMeta,
    TopicAssignment,
    ViewDef,
)


@dataclass(frozen=True)
class ToolInvocation:
    tool_name: str
    parameters: dict
    target_scope: ContextScope
    seed: int
    iteration: int


@dataclass
class ToolResult:
    events: list[PendingEvent] = field(default_factory=list)
    log: str = ""

    @property
    def artifacts(self) -> list:
        return [e.payload for e in self.events]


class ToolExecutor(Protocol):
    def execute(self, state: DataProductState, invocation: ToolInvocation,
                connector: SqliteConnector) -> ToolResult: ...


# --- shared helpers -----------------------------------------------------------

_QID_RE = re.compile(r"^q(\d+)$")


def _next_question_number(state: DataProductState) -> int:
    numbers = [int(m.group(1)) for qid in state.questions
               if (m := _QID_RE.match(qid))]
    return max(numbers, default=0) + 1


def _covered_columns(state: DataProductState) -> set[tuple[str, str]]:
    covered: set[tuple[str, str]] = set()
    for qv in state.latest_queries():
        covered.update(qv.analysis.referenced_columns)
    return covered


def _cols_of_kind(table: TableMeta, kinds: tuple[DataKind, ...]) -> list[str]:
    return [c.name for c in table.columns if c.data_kind in kinds]


def _int_param(parameters: dict, name: str, minimum: int = 1) -> int:
    value = parameters.get(name)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ParameterBoundsError(f"parameter {name!r} must be an integer >= {minimum}")
    return value


def _literal(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return repr(value) if isinstance(value, str) else str(value)


# --- question generation --------------------------------------------------------

_AGG_WORDS = {"SUM": "total", "AVG": "average", "MAX": "maximum", "COUNT": "count"}


def _single_table_candidates(table: TableMeta, covered: set[tuple[str, str]]):
    """Finite, deterministically ordered (text, targets) candidates for one
    table. Uncovered columns come first so coverage grows fastest."""
    def split(cols: list[str]) -> list[str]:
        fresh = [c for c in cols if (table.table_id, c) not in covered]
        stale = [c for c in cols if (table.table_id, c) in covered]
        return fresh + stale

    nums = split(_cols_of_kind(table, (DataKind.NUMERIC,)))
    cats = split(_cols_of_kind(table, (DataKind.TEXT, DataKind.BOOLEAN)))
    temps = split(_cols_of_kind(table, (DataKind.TEMPORAL,)))
    name = table.name
    out = []
    rounds = max(len(nums), len(cats), len(temps), 1)
    for i in range(rounds):
        num = nums[i % len(nums)] if nums else None
        cat = cats[i % len(cats)] if cats else None
        temp = temps[i % len(temps)] if temps else None
        if num and cat:
            out.append((
                f"What is the total {num} by {cat} in {name}?",
                (SchemaTarget(table.table_id, num), SchemaTarget(table.table_id, cat)),
            ))
            out.append((
                f"What is the average {num} by {cat} in {name}?",
                (SchemaTarget(table.table_id, num), SchemaTarget(table.table_id, cat)),
            ))
        if cat:
            out.append((
                f"How many rows does {name} have for each {cat}?",
                (SchemaTarget(table.table_id, cat),),
            ))
        if num:
            out.append((
                f"What is the maximum {num} recorded in {name}?",
                (SchemaTarget(table.table_id, num),),
            ))
        if num and temp:
            out.append((
                f"How does the total {num} change over {temp} in {name}?",
                (SchemaTarget(table.table_id, num), SchemaTarget(table.table_id, temp)),
            ))
        if temp and not num:
            out.append((
                f"How many rows does {name} have for each {temp}?",
                (SchemaTarget(table.table_id, temp),),
            ))
    return out


def _join_candidates(state: DataProductState, table: TableMeta,
                     covered: set[tuple[str, str]]):
    """Join questions over this table's outbound foreign keys."""
    out = []
    for fk in table.foreign_keys:
        remote = state.tables.get(fk.remote_table)
        if remote is None:
            continue
        nums = [c for c in _cols_of_kind(table, (DataKind.NUMERIC,))
                if c != fk.local_column]
        cats = _cols_of_kind(remote, (DataKind.TEXT, DataKind.BOOLEAN))
        if not cats:
            continue
        fresh_cats = sorted(cats, key=lambda c: ((remote.table_id, c) in covered, cats.index(c)))
        for i, cat in enumerate(fresh_cats[:2]):
            if nums:
                num = nums[i % len(nums)]
                out.append((
                    f"What is the total {num} in {table.name} for each {cat} in {remote.name}?",
                    (SchemaTarget(table.table_id, num), SchemaTarget(remote.table_id, cat)),
                ))
            out.append((
                f"How many {table.name} rows are linked to each {cat} in {remote.name}?",
                (SchemaTarget(table.table_id, fk.local_column),
                 SchemaTarget(remote.table_id, cat)),
            ))
    return out


def _interleave(singles: list, joins: list) -> list:
    """Mix join questions into the rotation (two single-table questions per
    join question): joins cover two tables each and feed view creation, so
    they should not wait behind the whole single-table template space."""
    out: list = []
    si = ji = 0
    while si < len(singles) or ji < len(joins):
        out.extend(singles[si:si + 2])
        si += 2
        if ji < len(joins):
            out.append(joins[ji])
            ji += 1
    return out


def run_question_generation(state: DataProductState, invocation: ToolInvocation,
                            connector: SqliteConnector) -> ToolResult:
    """Emit up to ``count`` distinct questions, serving priority tables
    round-robin before the rest."""
    count = _int_param(invocation.parameters, "count", 1)
    priority = list(invocation.parameters.get("priority_tables") or [])
    if not state.tables:
        raise ValidationError("cannot generate questions without a schema")
    covered = _covered_columns(state)

    ordered_tables = [t for t in priority if t in state.tables]
    rest = sorted(
        (t for t in state.tables if t not in set(ordered_tables)),
        key=lambda tid: (-state.tables[tid].row_count_estimate, tid),
    )
    ordered_tables += rest

    queues = {
        tid: _interleave(
            _single_table_candidates(state.tables[tid], covered),
            _join_candidates(state, state.tables[tid], covered))
        for tid in ordered_tables
    }
    existing_texts = {q.text for q in state.questions.values()}
    next_no = _next_question_number(state)
    events: list[PendingEvent] = []
    emitted = 0
    while emitted < count and any(queues.values()):
        for tid in ordered_tables:
            if emitted >= count:
                break
            queue = queues[tid]
            while queue:
                text, targets = queue.pop(0)
                if text in existing_texts:
                    continue
                qid = f"q{next_no:04d}"
                next_no += 1
                existing_texts.add(text)
                question = Question(qid, text, QuestionOrigin.GENERATED, None, targets)
                events.append(PendingEvent(
                    EventKind.QUESTION_ADDED, ContextScope.question(qid), question))
                emitted += 1
                break
    log = f"generated {emitted} question(s) across {len(ordered_tables)} table(s)"
    if emitted < count:
        log += f"; template space exhausted before reaching {count}"
    return ToolResult(events=events, log=log)


# --- text to SQL -----------------------------------------------------------------

def _pick_agg(text: str) -> str:
    lowered = text.lower()
    if "average" in lowered:
        return "AVG"
    if "maximum" in lowered:
        return "MAX"
    if "minimum" in lowered:
        return "MIN"
    if "how many" in lowered or "count" in lowered:
        return "COUNT"
    return "SUM"


def _split_target_columns(state: DataProductState, table_id: str,
                          targets: tuple[SchemaTarget, ...]):
    table = state.tables[table_id]
    nums, cats, temps = [], [], []
    for target in targets:
        if target.table_id != table_id or target.column is None:
            continue
        col = table.column(target.column)
        if col is None:
            continue
        if col.data_kind is DataKind.NUMERIC:
            nums.append(col.name)
        elif col.data_kind in (DataKind.TEXT, DataKind.BOOLEAN):
            cats.append(col.name)
        elif col.data_kind is DataKind.TEMPORAL:
            temps.append(col.name)
    return nums, cats, temps


def _single_table_sql(state: DataProductState, question: Question, table_id: str) -> str:
    table = state.tables[table_id]
    nums, cats, temps = _split_target_columns(state, table_id, question.schema_targets)
    agg = _pick_agg(question.text)
    name = table.name
    if "change over" in question.text.lower() and temps and nums:
        return (f"SELECT {temps[0]}, SUM({nums[0]}) FROM {name} "
                f"GROUP BY {temps[0]} ORDER BY {temps[0]}")
    if agg == "COUNT":
        group = cats[0] if cats else (temps[0] if temps else None)
        if group:
            return f"SELECT {group}, COUNT(*) FROM {name} GROUP BY {group}"
        return f"SELECT COUNT(*) FROM {name}"
    if nums and cats:
        return f"SELECT {cats[0]}, {agg}({nums[0]}) FROM {name} GROUP BY {cats[0]}"
    if nums:
        return f"SELECT {agg}({nums[0]}) FROM {name}"
    if cats:
        return f"SELECT {cats[0]}, COUNT(*) FROM {name} GROUP BY {cats[0]}"
    if temps:
        return f"SELECT {temps[0]}, COUNT(*) FROM {name} GROUP BY {temps[0]}"
    return f"SELECT COUNT(*) FROM {name}"


def _fk_edge(state: DataProductState, a: str, b: str):
    """Direct foreign-key edge between two tables, as (src, local, dst, remote)."""
    for src, dst in ((a, b), (b, a)):
        for fk in state.tables[src].foreign_keys:
            if fk.remote_table == dst:
                return src, fk.local_column, dst, fk.remote_column
    return None


def _join_sql(state: DataProductState, question: Question,
              src: str, local: str, dst: str, remote: str) -> str:
    src_t, dst_t = state.tables[src], state.tables[dst]
    src_nums, src_cats, _ = _split_target_columns(state, src, question.schema_targets)
    _, dst_cats, _ = _split_target_columns(state, dst, question.schema_targets)
    src_nums = [c for c in src_nums if c != local]
    agg = _pick_agg(question.text)
    join = (f"FROM {src_t.name} JOIN {dst_t.name} "
            f"ON {src_t.name}.{local} = {dst_t.name}.{remote}")
    group = (f"{dst_t.name}.{dst_cats[0]}" if dst_cats
             else (f"{src_t.name}.{src_cats[0]}" if src_cats else None))
    if src_nums and agg != "COUNT" and group:
        return (f"SELECT {group}, {agg}({src_t.name}.{src_nums[0]}) {join} "
                f"GROUP BY {group}")
    if group:
        return f"SELECT {group}, COUNT(*) {join} GROUP BY {group}"
    return f"SELECT COUNT(*) {join}"


def _sql_for_question(state: DataProductState, question: Question) -> Optional[str]:
    table_ids: list[str] = []
    for target in question.schema_targets:
        if target.table_id in state.tables and target.table_id not in table_ids:
            table_ids.append(target.table_id)
    if not table_ids:
        return None
    if len(table_ids) >= 2:
        edge = _fk_edge(state, table_ids[0], table_ids[1])
        if edge is not None:
            return _join_sql(state, question, *edge)
    return _single_table_sql(state, question, table_ids[0])


def run_text_to_sql(state: DataProductState, invocation: ToolInvocation,
                    connector: SqliteConnector) -> ToolResult:
    """Synthesize, validate, and execute SQL for up to ``max_questions``
    questions that lack it."""
    limit = _int_param(invocation.parameters, "max_questions", 1)
    eligible = state.questions_without_sql()
    if not eligible:
        raise NoEligibleQuestionError("every question already has SQL")
    catalog = build_catalog(state.tables.values(), state.views.values())
    events: list[PendingEvent] = []
    produced = skipped = 0
    notes: list[str] = []
    for qid in eligible[:limit]:
        question = state.questions[qid]
        sql = _sql_for_question(state, question)
        if sql is None:
            skipped += 1
            notes.append(f"{qid}: no usable schema targets")
            continue
        analysis = analyze(sql, catalog)
        outcome = connector.execute_timed(sql)
        if outcome.error and not outcome.timed_out:
            skipped += 1
            notes.append(f"{qid}: execution failed ({outcome.error})")
            continue
        version = QueryVersion(qid, 1, sql, "text_to_sql", analysis,
                               exec_ms=outcome.elapsed_ms, timed_out=outcome.timed_out)
        events.append(PendingEvent(
            EventKind.QUERY_VERSION_ADDED, ContextScope.question(qid), version))
        if outcome.ok:
            answers = len(state.answers.get(qid, ()))
            events.append(PendingEvent(
                EventKind.ANSWER_RECORDED, ContextScope.question(qid),
                AnswerVersion(qid, answers + 1, outcome.rows_digest, 1.0)))
        produced += 1
    log = f"generated SQL for {produced} of {min(limit, len(eligible))} question(s)"
    if notes:
        log += "; " + "; ".join(notes)
    return ToolResult(events=events, log=log)


# --- follow-up generation -----------------------------------------------------------

def _aggregate_item_index(select) -> Optional[int]:
    for idx, item in enumerate(select.items):
        expr = getattr(item, "expr", None)
        if isinstance(expr, FuncCall):
            return idx
    return None


def run_followup_generation(state: DataProductState, invocation: ToolInvocation,
                            connector: SqliteConnector) -> ToolResult:
    """Chain up to ``count`` follow-ups onto the longest answerable queries.

    Extending the longest parents first keeps the average query length moving
    up: each child is strictly longer than a parent drawn from the top of the
    length order.
    """
    count = _int_param(invocation.parameters, "count", 1)
    with_sql = state.questions_with_sql()
    if not with_sql:
        raise NoParentAvailableError("no question has SQL to extend")
    already_parents = {
        q.parent_question for q in state.questions.values()
        if q.origin is QuestionOrigin.FOLLOWUP and q.parent_question
    }
    eligible = [qid for qid in with_sql if qid not in already_parents]
    eligible.sort(key=lambda qid: (-state.latest_query(qid).analysis.token_count, qid))

    catalog = build_catalog(state.tables.values(), state.views.values())
    events: list[PendingEvent] = []
    next_no = _next_question_number(state)
    produced = 0
    notes: list[str] = []
    for qid in eligible:
        if produced >= count:
            break
        parent = state.questions[qid]
        parent_version = state.latest_query(qid)
        query, _ = parse(parent_version.sql_text)
        if query.set_ops:
            notes.append(f"{qid}: set operations are not extended")
            continue
        top = query.selects[0]
        child_text = None
        agg_idx = _aggregate_item_index(top)
        if top.group_by and agg_idx is not None and top.having is None:
            parent_rows = connector.execute_timed(parent_version.sql_text)
            values = []
            if parent_rows.ok and parent_rows.rows:
                values = [row[agg_idx] for row in parent_rows.rows
                          if isinstance(row[agg_idx], (int, float))]
            if values:
                median = statistics.median(values)
                top.having = Comparison(">", top.items[agg_idx].expr,
                                        Literal(_literal(median)))
                child_text = (f"Which groups behind '{parent.text}' exceed the "
                              f"typical value?")
        if child_text is None and not query.order_by:
            query.order_by = [(Literal("1"), "DESC")]
            if query.limit is None:
                query.limit = 5
            child_text = f"What are the leading results for '{parent.text}'?"
        elif child_text is None and query.limit is None:
            query.limit = 5
            child_text = f"What are the first results for '{parent.text}'?"
        if child_text is None:
            notes.append(f"{qid}: already fully extended")
            continue
        child_sql = render_query(query)
        analysis = analyze(child_sql, catalog)
        if analysis.token_count <= parent_version.analysis.token_count:
            notes.append(f"{qid}: extension did not lengthen the query")
            continue
        outcome = connector.execute_timed(child_sql)
        if not outcome.ok:
            notes.append(f"{qid}: child execution failed")
            continue
        child_qid = f"q{next_no:04d}"
        next_no += 1
        child = Question(child_qid, child_text, QuestionOrigin.FOLLOWUP,
                         qid, parent.schema_targets)
        events.append(PendingEvent(
            EventKind.QUESTION_ADDED, ContextScope.question(child_qid), child))
        events.append(PendingEvent(
            EventKind.QUERY_VERSION_ADDED, ContextScope.question(child_qid),
            QueryVersion(child_qid, 1, child_sql, "followup_generation",
                         analysis, outcome.elapsed_ms, False)))
        events.append(PendingEvent(
            EventKind.ANSWER_RECORDED, ContextScope.question(child_qid),
            AnswerVersion(child_qid, 1, outcome.rows_digest, 1.0)))
        produced += 1
    log = f"created {produced} follow-up question(s)"
    if notes:
        log += "; " + "; ".join(notes)
    return ToolResult(events=events, log=log)


# --- view creation ------------------------------------------------------------------

def view_name_for_pattern(pattern_key: str) -> str:
    return "v_" + hashlib.sha256(pattern_key.encode("utf-8")).hexdigest()[:8]


def run_view_creation(state: DataProductState, invocation: ToolInvocation,
                      connector: SqliteConnector) -> ToolResult:
    """Materialize the most frequent shared join patterns as views and rewrite
    every affected question's latest query through them."""
    limit = _int_param(invocation.parameters, "max_views", 1)
    groups: dict[str, list[str]] = {}
    for qv in state.latest_queries():
        key = qv.analysis.join_pattern_key
        if key:
            groups.setdefault(key, []).append(qv.question_id)
    shared = {key: qids for key, qids in groups.items() if len(qids) >= 2}
    if not shared:
        raise NoSharedPatternError("no join pattern is shared by two or more queries")

    ranked = sorted(shared.items(), key=lambda kv: (-len(kv[1]), kv[0]))[:limit]
    views = dict(state.views)
    events: list[PendingEvent] = []
    notes: list[str] = []
    rewrites = 0
    for key, qids in ranked:
        qids = sorted(qids)
        existing = next((v for v in views.values() if v.covers_pattern == key), None)
        if existing is not None:
            view = existing
        else:
            catalog = build_catalog(state.tables.values(), views.values())
            exemplar = state.latest_query(qids[0]).sql_text
            name = view_name_for_pattern(key)
            view = ViewDef(name, name, build_join_view_sql(exemplar, catalog),
                           key, invocation.iteration)
            if not connector.view_exists(name):
                connector.create_view(view)
            views[view.view_id] = view
            events.append(PendingEvent(EventKind.VIEW_ADDED, ContextScope.database(), view))
        catalog = build_catalog(state.tables.values(), views.values())
        for qid in qids:
            original = state.latest_query(qid)
            rewritten = rewrite_with_view(original.sql_text, view, catalog)
            before = connector.execute_timed(original.sql_text)
            after = connector.execute_timed(rewritten)
            if not (before.ok and after.ok):
                notes.append(f"{qid}: execution failed during rewrite check")
                continue
            if before.rows_digest != after.rows_digest:
                notes.append(f"{qid}: REWRITE MISMATCH, skipped")
                continue
            analysis = analyze(rewritten, catalog)
            events.append(PendingEvent(
                EventKind.QUERY_VERSION_ADDED, ContextScope.question(qid),
                QueryVersion(qid, original.version_no + 1, rewritten,
                             "view_creation", analysis, after.elapsed_ms, False)))
            answers = len(state.answers.get(qid, ()))
            events.append(PendingEvent(
                EventKind.ANSWER_RECORDED, ContextScope.question(qid),
                AnswerVersion(qid, answers + 1, after.rows_digest, 1.0)))
            rewrites += 1
            notes.append(f"{qid}: rewritten via {view.name}, result digests equal")
    log = (f"materialized {len(ranked)} pattern(s), rewrote {rewrites} query(ies)"
           + ("; " + "; ".join(notes) if notes else ""))
    return ToolResult(events=events, log=log)


# --- topic mapping ------------------------------------------------------------------

def _query_kind(state: DataProductState, analysis) -> str:
    if analysis.join_count >= 1 or len(analysis.referenced_tables) >= 2:
        return "join"
    temporal_ref = any(
        (col := state.tables[tid].column(name)) is not None
        and col.data_kind is DataKind.TEMPORAL
        for tid, name in analysis.referenced_columns
        if tid in state.tables
    )
    if temporal_ref and analysis.has_group_by:
        return "trend"
    if analysis.aggregate_count >= 1 or analysis.has_group_by:
        return "aggregate"
    return "lookup"


def _dominant_table(state: DataProductState, analysis) -> Optional[str]:
    counts: dict[str, int] = {}
    for tid, _col in analysis.referenced_columns:
        if tid in state.tables:
            counts[tid] = counts.get(tid, 0) + 1
    for tid in analysis.referenced_tables:
        counts.setdefault(tid, 0)
    if not counts:
        return None
    best = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
    return state.tables[best].name


def run_topic_mapping(state: DataProductState, invocation: ToolInvocation,
                      connector: SqliteConnector) -> ToolResult:
    """Label every unclustered answered question as '<dominant table> · <kind>'."""
    unclustered = [qid for qid in state.questions_with_sql() if qid not in state.topics]
    events: list[PendingEvent] = []
    for qid in unclustered:
        analysis = state.latest_query(qid).analysis
        dominant = _dominant_table(state, analysis)
        if dominant is None:
            continue
        label = f"{dominant} · {_query_kind(state, analysis)}"
        events.append(PendingEvent(
            EventKind.TOPIC_ASSIGNED, ContextScope.question(qid),
            TopicAssignment(qid, label)))
    if not events:
        return ToolResult(events=[], log="every answered question is already clustered")
    return ToolResult(events=events, log=f"assigned {len(events)} topic label(s)")


# --- executor ----------------------------------------------------------------------

_RUNNERS = {
    "question_generation": run_question_generation,
    "text_to_sql": run_text_to_sql,
    "followup_generation": run_followup_generation,
    "view_creation": run_view_creation,
    "topic_mapping": run_topic_mapping,
}


class BaselineToolExecutor:
    """Dispatches invocations to the built-in tool implementations."""

    def execute(self, state: DataProductState, invocation: ToolInvocation,
                connector: SqliteConnector) -> ToolResult:
        runner = _RUNNERS.get(invocation.tool_name)
        if runner is None:
            raise UnknownToolError(f"no baseline implementation for {invocation.tool_name!r}")
        return runner(state, invocation, connector)
