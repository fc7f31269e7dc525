from __future__ import annotations

import statistics

import pytest

from dataprod.connector import ConnectionProfile, SqliteConnector
from dataprod.errors import (
    NoEligibleQuestionError,
    NoParentAvailableError,
    NoSharedPatternError,
    ParameterBoundsError,
)
from dataprod.fixtures import build_retail_db
from dataprod.sqlanalyzer import analyze, build_catalog
from dataprod.state import (
    ContextScope,
    DataKind,
    EventKind,
    QuestionOrigin,
    SchemaTarget,
    StateStore,
)
from dataprod.tools import (
    BaselineToolExecutor,
    ToolInvocation,
    run_followup_generation,
    run_question_generation,
    run_text_to_sql,
    run_topic_mapping,
    run_view_creation,
    view_name_for_pattern,
)

from conftest import FakeTimer, add_question, add_sql, add_table, table


def invocation(name: str, **params) -> ToolInvocation:
    return ToolInvocation(name, params, ContextScope.database(), seed=7, iteration=1)


def apply_result(store: StateStore, result) -> None:
    for pending in result.events:
        store.apply(pending)


def catalog_of(store: StateStore):
    return build_catalog(store.state.tables.values(), store.state.views.values())


# --- question generation ---------------------------------------------------------

def test_three_questions_on_single_table_schema(retail_connector):
    store = StateStore()
    add_table(store, table("only", ("amount", DataKind.NUMERIC),
                           ("label", DataKind.TEXT), rows=5))
    result = run_question_generation(store.state, invocation(
        "question_generation", count=3, priority_tables=[]), retail_connector)
    assert len(result.events) == 3
    texts = [e.payload.text for e in result.events]
    assert len(set(texts)) == 3
    for event in result.events:
        assert {t.table_id for t in event.payload.schema_targets} == {"only"}


def test_priority_tables_each_get_a_question(retail_store, retail_connector):
    priority = ["customers", "suppliers", "shipments", "products", "orders"]
    result = run_question_generation(retail_store.state, invocation(
        "question_generation", count=20, priority_tables=priority), retail_connector)
    assert len(result.events) == 20
    targeted = set()
    for event in result.events:
        targeted.update(t.table_id for t in event.payload.schema_targets)
    assert set(priority) <= targeted


def test_question_generation_deterministic(retail_store, retail_connector):
    inv = invocation("question_generation", count=10, priority_tables=["orders"])
    first = run_question_generation(retail_store.state, inv, retail_connector)
    second = run_question_generation(retail_store.state, inv, retail_connector)
    assert [e.payload.text for e in first.events] == \
        [e.payload.text for e in second.events]


def test_question_count_bounds(retail_store, retail_connector):
    with pytest.raises(ParameterBoundsError):
        run_question_generation(retail_store.state, invocation(
            "question_generation", count=0), retail_connector)


def test_generated_questions_do_not_duplicate_existing(retail_store, retail_connector):
    inv = invocation("question_generation", count=5, priority_tables=[])
    first = run_question_generation(retail_store.state, inv, retail_connector)
    apply_result(retail_store, first)
    second = run_question_generation(retail_store.state, inv, retail_connector)
    old = {e.payload.text for e in first.events}
    new = {e.payload.text for e in second.events}
    assert not old & new


# --- text to SQL -------------------------------------------------------------------

def test_grouped_aggregate_shape(retail_store, retail_connector):
    add_question(retail_store, "q0001",
                 text="What is the total total_amount by status in orders?",
                 targets=(SchemaTarget("orders", "total_amount"),
                          SchemaTarget("orders", "status")))
    result = run_text_to_sql(retail_store.state, invocation(
        "text_to_sql", max_questions=5), retail_connector)
    versions = [e.payload for e in result.events
                if e.kind is EventKind.QUERY_VERSION_ADDED]
    assert len(versions) == 1
    sql = versions[0].sql_text
    assert sql == "SELECT status, SUM(total_amount) FROM orders GROUP BY status"
    outcome = retail_connector.execute_timed(sql)
    assert outcome.ok
    answers = [e.payload for e in result.events if e.kind is EventKind.ANSWER_RECORDED]
    assert len(answers) == 1 and answers[0].confidence == 1.0
    assert answers[0].payload_digest == outcome.rows_digest


def test_cross_table_targets_produce_a_join(retail_store, retail_connector):
    add_question(retail_store, "q0001",
                 text="What is the total total_amount in orders for each city in customers?",
                 targets=(SchemaTarget("orders", "total_amount"),
                          SchemaTarget("customers", "city")))
    result = run_text_to_sql(retail_store.state, invocation(
        "text_to_sql", max_questions=1), retail_connector)
    version = next(e.payload for e in result.events
                   if e.kind is EventKind.QUERY_VERSION_ADDED)
    assert version.analysis.join_count == 1
    assert version.analysis.referenced_tables == {"orders", "customers"}


def test_text_to_sql_bounds_and_eligibility(retail_store, retail_connector):
    with pytest.raises(ParameterBoundsError):
        run_text_to_sql(retail_store.state, invocation(
            "text_to_sql", max_questions=0), retail_connector)
    with pytest.raises(NoEligibleQuestionError):
        run_text_to_sql(retail_store.state, invocation(
            "text_to_sql", max_questions=3), retail_connector)


def test_all_emitted_sql_parses_and_executes(retail_store, retail_connector):
    gen = run_question_generation(retail_store.state, invocation(
        "question_generation", count=30, priority_tables=[]), retail_connector)
    apply_result(retail_store, gen)
    result = run_text_to_sql(retail_store.state, invocation(
        "text_to_sql", max_questions=30), retail_connector)
    versions = [e.payload for e in result.events
                if e.kind is EventKind.QUERY_VERSION_ADDED]
    assert versions
    catalog = catalog_of(retail_store)
    for version in versions:
        analyze(version.sql_text, catalog)  # parses and resolves
        assert retail_connector.execute_timed(version.sql_text).ok


# --- follow-up generation -------------------------------------------------------------

def _seed_answered_question(store, connector, qid, sql, text="seed question"):
    add_question(store, qid, text=text)
    add_sql(store, qid, sql, catalog_of(store), created_by="text_to_sql")


def test_followup_adds_having_with_parent_median(retail_store, retail_connector):
    sql = "SELECT status, SUM(total_amount) FROM orders GROUP BY status"
    _seed_answered_question(retail_store, retail_connector, "q0001", sql)
    result = run_followup_generation(retail_store.state, invocation(
        "followup_generation", count=1), retail_connector)
    questions = [e.payload for e in result.events if e.kind is EventKind.QUESTION_ADDED]
    versions = [e.payload for e in result.events
                if e.kind is EventKind.QUERY_VERSION_ADDED]
    assert len(questions) == 1 and len(versions) == 1
    child_q, child_v = questions[0], versions[0]
    assert child_q.origin is QuestionOrigin.FOLLOWUP
    assert child_q.parent_question == "q0001"
    rows = retail_connector.execute_timed(sql).rows
    median = statistics.median(row[1] for row in rows)
    formatted = str(int(median)) if float(median).is_integer() else str(median)
    assert child_v.sql_text == sql + f" HAVING SUM(total_amount) > {formatted}"
    parent_tokens = retail_store.state.latest_query("q0001").analysis.token_count
    assert child_v.analysis.token_count > parent_tokens


def test_followup_on_flat_query_orders_and_limits(retail_store, retail_connector):
    _seed_answered_question(retail_store, retail_connector, "q0001",
                            "SELECT name, city FROM customers")
    result = run_followup_generation(retail_store.state, invocation(
        "followup_generation", count=1), retail_connector)
    version = next(e.payload for e in result.events
                   if e.kind is EventKind.QUERY_VERSION_ADDED)
    assert "ORDER BY" in version.sql_text and "LIMIT" in version.sql_text


def test_followup_requires_parents(retail_store, retail_connector):
    with pytest.raises(NoParentAvailableError):
        run_followup_generation(retail_store.state, invocation(
            "followup_generation", count=1), retail_connector)


def test_followup_raises_average_query_length(retail_store, retail_connector):
    _seed_answered_question(retail_store, retail_connector, "q0001",
                            "SELECT status, SUM(total_amount) FROM orders GROUP BY status")
    _seed_answered_question(retail_store, retail_connector, "q0002",
                            "SELECT name FROM customers")
    lengths = [qv.analysis.token_count for qv in retail_store.state.latest_queries()]
    before = sum(lengths) / len(lengths)
    result = run_followup_generation(retail_store.state, invocation(
        "followup_generation", count=2), retail_connector)
    apply_result(retail_store, result)
    lengths = [qv.analysis.token_count for qv in retail_store.state.latest_queries()]
    after = sum(lengths) / len(lengths)
    assert after > before


# --- view creation -----------------------------------------------------------------

_JOIN_A = ("SELECT customers.city, SUM(orders.total_amount) FROM orders "
           "JOIN customers ON orders.customer_id = customers.customer_id "
           "GROUP BY customers.city")
_JOIN_B = ("SELECT customers.name, COUNT(*) FROM orders "
           "JOIN customers ON orders.customer_id = customers.customer_id "
           "GROUP BY customers.name")
_JOIN_C = ("SELECT customers.active, MAX(orders.total_amount) FROM orders "
           "JOIN customers ON orders.customer_id = customers.customer_id "
           "GROUP BY customers.active")
_JOIN_OTHER = ("SELECT products.category, SUM(order_items.quantity) FROM order_items "
               "JOIN products ON order_items.product_id = products.product_id "
               "GROUP BY products.category")


def test_view_creation_rewrites_shared_pattern(retail_store, retail_connector):
    for qid, sql in [("q0001", _JOIN_A), ("q0002", _JOIN_B), ("q0003", _JOIN_C)]:
        _seed_answered_question(retail_store, retail_connector, qid, sql)
    result = run_view_creation(retail_store.state, invocation(
        "view_creation", max_views=1), retail_connector)
    views = [e.payload for e in result.events if e.kind is EventKind.VIEW_ADDED]
    versions = [e.payload for e in result.events
                if e.kind is EventKind.QUERY_VERSION_ADDED]
    assert len(views) == 1
    assert len(versions) == 3
    apply_result(retail_store, result)
    catalog = catalog_of(retail_store)
    for version in versions:
        assert version.analysis.join_count == 0  # join folded into the view
        original = retail_store.state.query_versions[version.question_id][0]
        assert version.analysis.token_count < original.analysis.token_count
        # result multisets are identical
        assert (retail_connector.execute_timed(version.sql_text).rows_digest
                == retail_connector.execute_timed(original.sql_text).rows_digest)
        # coverage footprint preserved through the view
        assert version.analysis.referenced_tables == original.analysis.referenced_tables
        assert version.analysis.referenced_columns >= original.analysis.referenced_columns


def test_view_creation_picks_most_frequent_pattern(retail_store, retail_connector):
    for qid, sql in [("q0001", _JOIN_A), ("q0002", _JOIN_B), ("q0003", _JOIN_C),
                     ("q0004", _JOIN_OTHER), ("q0005", _JOIN_OTHER.replace("SUM", "MAX"))]:
        _seed_answered_question(retail_store, retail_connector, qid, sql)
    result = run_view_creation(retail_store.state, invocation(
        "view_creation", max_views=1), retail_connector)
    views = [e.payload for e in result.events if e.kind is EventKind.VIEW_ADDED]
    assert len(views) == 1
    pattern = analyze(_JOIN_A, catalog_of(retail_store)).join_pattern_key
    assert views[0].covers_pattern == pattern
    assert views[0].name == view_name_for_pattern(pattern)


def test_view_creation_requires_shared_pattern(retail_store, retail_connector):
    _seed_answered_question(retail_store, retail_connector, "q0001", _JOIN_A)
    with pytest.raises(NoSharedPatternError):
        run_view_creation(retail_store.state, invocation(
            "view_creation", max_views=1), retail_connector)


# --- topic mapping -----------------------------------------------------------------

def test_aggregate_single_table_label(retail_store, retail_connector):
    _seed_answered_question(retail_store, retail_connector, "q0001",
                            "SELECT status, SUM(total_amount) FROM orders GROUP BY status")
    result = run_topic_mapping(retail_store.state, invocation("topic_mapping"),
                               retail_connector)
    assert len(result.events) == 1
    assert result.events[0].payload.topic_label == "orders · aggregate"


def test_join_label_uses_dominant_table(retail_store, retail_connector):
    # orders contributes two referenced columns, customers one
    sql = ("SELECT SUM(orders.total_amount) FROM orders "
           "JOIN customers ON orders.customer_id = customers.customer_id")
    _seed_answered_question(retail_store, retail_connector, "q0001", sql)
    result = run_topic_mapping(retail_store.state, invocation("topic_mapping"),
                               retail_connector)
    assert result.events[0].payload.topic_label == "orders · join"


def test_rerun_on_clustered_state_is_a_noop(retail_store, retail_connector):
    _seed_answered_question(retail_store, retail_connector, "q0001",
                            "SELECT name FROM customers")
    first = run_topic_mapping(retail_store.state, invocation("topic_mapping"),
                              retail_connector)
    apply_result(retail_store, first)
    second = run_topic_mapping(retail_store.state, invocation("topic_mapping"),
                               retail_connector)
    assert second.events == []
    assert second.log  # explanatory


def test_lookup_and_trend_kinds(retail_store, retail_connector):
    _seed_answered_question(retail_store, retail_connector, "q0001",
                            "SELECT name, city FROM customers")
    _seed_answered_question(
        retail_store, retail_connector, "q0002",
        "SELECT order_date, SUM(total_amount) FROM orders GROUP BY order_date")
    result = run_topic_mapping(retail_store.state, invocation("topic_mapping"),
                               retail_connector)
    labels = {e.payload.question_id: e.payload.topic_label for e in result.events}
    assert labels["q0001"] == "customers · lookup"
    assert labels["q0002"] == "orders · trend"


# --- executor dispatch / determinism ---------------------------------------------------

def test_executor_dispatch_and_purity(retail_db_path, retail_store):
    executor = BaselineToolExecutor()
    inv = invocation("question_generation", count=4, priority_tables=[])
    conn_a = SqliteConnector(ConnectionProfile(retail_db_path), timer=FakeTimer())
    conn_b = SqliteConnector(ConnectionProfile(retail_db_path), timer=FakeTimer())
    try:
        first = executor.execute(retail_store.state, inv, conn_a)
        second = executor.execute(retail_store.state, inv, conn_b)
        assert first.events == second.events
        assert first.log == second.log
    finally:
        conn_a.close()
        conn_b.close()


def test_executor_rejects_unknown_tool(retail_store, retail_connector):
    from dataprod.errors import UnknownToolError

    with pytest.raises(UnknownToolError):
        BaselineToolExecutor().execute(
            retail_store.state, invocation("mystery"), retail_connector)
