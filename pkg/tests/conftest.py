from __future__ import annotations

import pytest

from dataprod.connector import ConnectionProfile, SqliteConnector
from dataprod.fixtures import build_retail_db
from dataprod.sqlanalyzer import analyze, build_catalog
from dataprod.state import (
    ColumnMeta,
    ContextScope,
    DataKind,
    EventKind,
    ForeignKey,
    PendingEvent,
    Question,
    QuestionOrigin,
    QueryVersion,
    SchemaTarget,
    StateStore,
    TableMeta,
)


def table(table_id: str, *cols: tuple[str, DataKind], rows: int = 0,
          fks: tuple[ForeignKey, ...] = ()) -> TableMeta:
    return TableMeta(
        table_id=table_id,
        name=table_id,
        columns=tuple(ColumnMeta(name, kind) for name, kind in cols),
        row_count_estimate=rows,
        foreign_keys=fks,
    )


@pytest.fixture
def two_tables() -> list[TableMeta]:
    return [
        table("t1", ("a", DataKind.NUMERIC), ("b", DataKind.NUMERIC), rows=10),
        table("t2", ("b", DataKind.NUMERIC), ("c", DataKind.TEXT), rows=20),
    ]


@pytest.fixture
def two_table_catalog(two_tables):
    return build_catalog(two_tables)


def add_table(store: StateStore, meta: TableMeta) -> None:
    store.apply(PendingEvent(EventKind.TABLE_ADDED, ContextScope.table(meta.table_id), meta))


def add_question(store: StateStore, qid: str, text: str = "",
                 targets: tuple[SchemaTarget, ...] = (),
                 origin: QuestionOrigin = QuestionOrigin.GENERATED,
                 parent: str | None = None) -> None:
    q = Question(qid, text or f"question {qid}", origin, parent, targets)
    store.apply(PendingEvent(EventKind.QUESTION_ADDED, ContextScope.question(qid), q))


_acceptance_results: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _acceptance_results.append((name, report.outcome.upper()))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _acceptance_results:
        terminalreporter.write_line(f"[{outcome:>6s}] {name}")


class FakeTimer:
    """Deterministic stand-in for perf_counter: advances a fixed step per call."""

    def __init__(self, step: float = 0.0005):
        self.now = 0.0
        self.step = step

    def __call__(self) -> float:
        self.now += self.step
        return self.now


@pytest.fixture
def retail_db_path(tmp_path) -> str:
    return build_retail_db(str(tmp_path / "retail.db"))


@pytest.fixture
def retail_connector(retail_db_path):
    connector = SqliteConnector(ConnectionProfile(retail_db_path), timer=FakeTimer())
    yield connector
    connector.close()


@pytest.fixture
def retail_store(retail_connector) -> StateStore:
    from dataprod.connector import topological_table_order

    store = StateStore()
    for meta in topological_table_order(retail_connector.introspect()):
        add_table(store, meta)
    return store


def add_sql(store: StateStore, qid: str, sql: str, catalog,
            created_by: str = "test", exec_ms: float | None = None,
            timed_out: bool = False) -> QueryVersion:
    existing = store.state.query_versions.get(qid, ())
    version = QueryVersion(
        question_id=qid,
        version_no=len(existing) + 1,
        sql_text=sql,
        created_by=created_by,
        analysis=analyze(sql, catalog),
        exec_ms=exec_ms,
        timed_out=timed_out,
    )
    store.apply(PendingEvent(EventKind.QUERY_VERSION_ADDED, ContextScope.question(qid), version))
    return version
