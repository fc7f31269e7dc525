from __future__ import annotations

import sqlite3

import pytest

from dataprod.connector import (
    ConnectionProfile,
    SqliteConnector,
    canonical_rows_digest,
    topological_table_order,
)
from dataprod.errors import (
    DataSourceConnectionError,
    EmptySchemaError,
    NameCollisionError,
    ValidationError,
)
from dataprod.state import DataKind, ViewDef


def test_fixture_introspection(retail_connector):
    tables = {t.table_id: t for t in retail_connector.introspect()}
    assert len(tables) == 6
    orders = tables["orders"]
    assert [c.name for c in orders.columns] == [
        "order_id", "customer_id", "order_date", "status", "total_amount"]
    assert orders.row_count_estimate == 60
    fk = orders.foreign_keys[0]
    assert (fk.local_column, fk.remote_table, fk.remote_column) == (
        "customer_id", "customers", "customer_id")
    kinds = {c.name: c.data_kind for c in tables["customers"].columns}
    assert kinds["signup_date"] is DataKind.TEMPORAL
    assert kinds["active"] is DataKind.BOOLEAN
    assert kinds["name"] is DataKind.TEXT
    assert kinds["customer_id"] is DataKind.NUMERIC


def test_introspection_is_idempotent(retail_connector):
    assert retail_connector.introspect() == retail_connector.introspect()


def test_empty_database_rejected(tmp_path):
    path = str(tmp_path / "empty.db")
    sqlite3.connect(path).close()
    connector = SqliteConnector(ConnectionProfile(path))
    with pytest.raises(EmptySchemaError):
        connector.introspect()


def test_missing_file_is_a_connection_error(tmp_path):
    with pytest.raises(DataSourceConnectionError):
        SqliteConnector(ConnectionProfile(str(tmp_path / "nope.db")))


def test_invalid_timeout_rejected():
    with pytest.raises(ValidationError):
        ConnectionProfile(":memory:", statement_timeout_ms=0)


def test_select_one(retail_connector):
    outcome = retail_connector.execute_timed("SELECT 1")
    assert outcome.ok
    assert outcome.row_count == 1
    assert outcome.timed_out is False
    assert outcome.rows == ((1,),)


def test_sql_error_is_returned_not_raised(retail_connector):
    outcome = retail_connector.execute_timed("SELEKT broken")
    assert outcome.error
    assert outcome.rows_digest is None


def test_slow_query_times_out(retail_db_path):
    connector = SqliteConnector(
        ConnectionProfile(retail_db_path, statement_timeout_ms=100))
    try:
        # 60 * 150 * 150 * 45 cross-joined rows: far beyond a 100 ms budget
        outcome = connector.execute_timed(
            "SELECT COUNT(*) FROM orders, order_items a, order_items b, shipments")
        assert outcome.timed_out is True
        assert outcome.elapsed_ms >= 100
        assert outcome.error
    finally:
        connector.close()


def test_digest_is_order_independent():
    rows_a = [(1, "x"), (2, "y"), (3, None)]
    rows_b = [(3, None), (1, "x"), (2, "y")]
    assert canonical_rows_digest(rows_a) == canonical_rows_digest(rows_b)
    assert canonical_rows_digest(rows_a) != canonical_rows_digest([(1, "x")])


def test_digest_distinguishes_int_and_float():
    assert canonical_rows_digest([(1,)]) != canonical_rows_digest([(1.0,)])


def test_create_view_and_query(retail_connector):
    view = ViewDef("v_t", "v_t", "SELECT name AS customer_name FROM customers", "", 0)
    retail_connector.create_view(view)
    outcome = retail_connector.execute_timed("SELECT customer_name FROM v_t")
    assert outcome.ok and outcome.row_count == 30
    with pytest.raises(NameCollisionError):
        retail_connector.create_view(view)


def test_read_only_views_use_scratch_namespace(retail_db_path):
    connector = SqliteConnector(ConnectionProfile(retail_db_path, read_only=True))
    try:
        view = ViewDef("v_ro", "v_ro", "SELECT city FROM customers", "", 0)
        connector.create_view(view)
        assert connector.execute_timed("SELECT * FROM v_ro").ok
    finally:
        connector.close()
    # the view never touched the file
    fresh = SqliteConnector(ConnectionProfile(retail_db_path))
    try:
        assert not fresh.view_exists("v_ro")
    finally:
        fresh.close()


def test_views_excluded_from_introspection(retail_connector):
    retail_connector.create_view(
        ViewDef("v_x", "v_x", "SELECT city FROM customers", "", 0))
    assert all(t.table_id != "v_x" for t in retail_connector.introspect())


def test_topological_order_respects_fks(retail_connector):
    ordered = topological_table_order(retail_connector.introspect())
    seen = set()
    for table in ordered:
        for fk in table.foreign_keys:
            assert fk.remote_table in seen or fk.remote_table == table.table_id
        seen.add(table.table_id)
    assert len(ordered) == 6
