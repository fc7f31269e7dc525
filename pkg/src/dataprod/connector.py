"""Schema introspection and timed query execution for the embedded backend.

One reference backend (SQLite file format) keeps tests hermetic; the
``ConnectionProfile`` / ``SqliteConnector`` surface is the seam where other
engines would plug in. Result sets are digested in a canonical
order-independent form so rewrite-equality checks and answer versioning do
not depend on row order.
"""

from __future__ import annotations

import hashlib
import json
import os
import sqlite3
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (
    DataSourceConnectionError,
    EmptySchemaError,
    NameCollisionError,
    ValidationError,
)
from .state import ColumnMeta, DataKind, ForeignKey, TableMeta, ViewDef


@dataclass(frozen=True)
class ConnectionProfile:
    location: str
    kind: str = "sqlite"
    read_only: bool = False
    statement_timeout_ms: int = 5000

    def __post_init__(self):
        if self.statement_timeout_ms <= 0:
            raise ValidationError("statement_timeout_ms must be positive")


@dataclass
class ExecutionOutcome:
    rows_digest: Optional[str]
    row_count: int
    elapsed_ms: float
    timed_out: bool
    error: Optional[str] = None
    rows: Optional[tuple] = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None and not self.timed_out


def _encode_value(value) -> object:
    if isinstance(value, bytes):
        return {"__bytes__": value.hex()}
    if isinstance(value, float):
        return {"__float__": repr(value)}
    return value


def canonical_rows_digest(rows) -> str:
    """Hash of the result multiset; identical for any row ordering."""
    encoded = sorted(
        json.dumps([_encode_value(v) for v in row], separators=(",", ":"))
        for row in rows
    )
    return hashlib.sha256("\n".join(encoded).encode("utf-8")).hexdigest()


def _kind_of_declared_type(declared: str) -> DataKind:
    upper = (declared or "").upper()
    if "BOOL" in upper:
        return DataKind.BOOLEAN
    if "DATE" in upper or "TIME" in upper:
        return DataKind.TEMPORAL
    if any(tok in upper for tok in ("INT", "REAL", "NUM", "DEC", "DOUB", "FLOA")):
        return DataKind.NUMERIC
    if any(tok in upper for tok in ("CHAR", "TEXT", "CLOB")):
        return DataKind.TEXT
    return DataKind.OTHER


class SqliteConnector:
    """Owns one SQLite connection.

    When the profile is read-only the database file is opened immutable and
    system-created views live in the connection's temp (scratch) namespace
    instead of the file.
    """

    def __init__(self, profile: ConnectionProfile,
                 timer: Callable[[], float] = time.perf_counter):
        if profile.kind != "sqlite":
            raise DataSourceConnectionError(f"unsupported source kind {profile.kind!r}")
        self.profile = profile
        self._timer = timer
        if profile.location != ":memory:" and not os.path.exists(profile.location):
            raise DataSourceConnectionError(f"database file not found: {profile.location}")
        try:
            if profile.read_only and profile.location != ":memory:":
                uri = f"file:{profile.location}?mode=ro"
                self._conn = sqlite3.connect(uri, uri=True, check_same_thread=False)
            else:
                self._conn = sqlite3.connect(profile.location, check_same_thread=False)
        except sqlite3.Error as exc:
            raise DataSourceConnectionError(str(exc)) from exc

    def close(self) -> None:
        self._conn.close()

    # -- introspection -----------------------------------------------------

    def introspect(self) -> list[TableMeta]:
        cur = self._execute_raw(
            "SELECT name FROM sqlite_master "
            "WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name")
        names = [row[0] for row in cur.fetchall()]
        if not names:
            raise EmptySchemaError("data source has no tables")
        tables = []
        for name in names:
            info = self._execute_raw(f'PRAGMA table_info("{name}")').fetchall()
            columns = tuple(
                ColumnMeta(col[1], _kind_of_declared_type(col[2]), not col[3])
                for col in info
            )
            pk_by_table = {}
            fks = []
            for fk in self._execute_raw(f'PRAGMA foreign_key_list("{name}")').fetchall():
                remote_table, local_col, remote_col = fk[2], fk[3], fk[4]
                if remote_col is None:
                    remote_col = self._primary_key_of(remote_table, pk_by_table)
                fks.append(ForeignKey(local_col, remote_table.lower(), remote_col))
            count = self._execute_raw(f'SELECT COUNT(*) FROM "{name}"').fetchone()[0]
            tables.append(TableMeta(
                table_id=name.lower(),
                name=name,
                columns=columns,
                row_count_estimate=count,
                foreign_keys=tuple(fks),
            ))
        return tables

    def _primary_key_of(self, table_name: str, cache: dict) -> str:
        if table_name not in cache:
            info = self._execute_raw(f'PRAGMA table_info("{table_name}")').fetchall()
            pks = [col[1] for col in info if col[5]]
            cache[table_name] = pks[0] if pks else info[0][1]
        return cache[table_name]

    # -- execution -----------------------------------------------------------

    def _execute_raw(self, sql: str):
        try:
            return self._conn.execute(sql)
        except sqlite3.ProgrammingError as exc:
            raise DataSourceConnectionError(str(exc)) from exc

    def execute_timed(self, sql: str) -> ExecutionOutcome:
        """Run one statement, measuring wall-clock execution plus row fetch.

        SQL errors are returned on the outcome, never raised; losing the
        connection itself is a hard error.
        """
        if not sql or not sql.strip():
            raise ValidationError("sql must be non-empty")
        timeout_ms = self.profile.statement_timeout_ms
        start = self._timer()
        deadline = start + timeout_ms / 1000.0
        timed_out_flag = {"hit": False}

        def guard():
            if self._timer() >= deadline:
                timed_out_flag["hit"] = True
                return 1
            return 0

        try:
            self._conn.set_progress_handler(guard, 2000)
            cursor = self._conn.execute(sql)
            rows = tuple(tuple(row) for row in cursor.fetchall())
        except sqlite3.OperationalError as exc:
            elapsed = (self._timer() - start) * 1000.0
            if timed_out_flag["hit"]:
                return ExecutionOutcome(
                    rows_digest=None,
                    row_count=0,
                    elapsed_ms=max(elapsed, float(timeout_ms)),
                    timed_out=True,
                    error=f"statement timeout after {timeout_ms} ms",
                )
            return ExecutionOutcome(None, 0, elapsed, False, error=str(exc))
        except sqlite3.ProgrammingError as exc:
            raise DataSourceConnectionError(str(exc)) from exc
        except sqlite3.Error as exc:
            elapsed = (self._timer() - start) * 1000.0
            return ExecutionOutcome(None, 0, elapsed, False, error=str(exc))
        finally:
            try:
                self._conn.set_progress_handler(None, 0)
            except sqlite3.ProgrammingError:
                pass
        elapsed = (self._timer() - start) * 1000.0
        return ExecutionOutcome(
            rows_digest=canonical_rows_digest(rows),
            row_count=len(rows),
            elapsed_ms=elapsed,
            timed_out=False,
            rows=rows,
        )

    # -- views ----------------------------------------------------------------

    def view_exists(self, name: str) -> bool:
        for master in ("sqlite_master", "sqlite_temp_master"):
            try:
                row = self._conn.execute(
                    f"SELECT 1 FROM {master} WHERE type = 'view' AND lower(name) = ?",
                    (name.lower(),),
                ).fetchone()
            except sqlite3.ProgrammingError as exc:
                raise DataSourceConnectionError(str(exc)) from exc
            if row:
                return True
        return False

    def create_view(self, view: ViewDef) -> None:
        if self.view_exists(view.name):
            raise NameCollisionError(f"view {view.name!r} already exists")
        keyword = "CREATE TEMP VIEW" if self.profile.read_only else "CREATE VIEW"
        try:
            self._conn.execute(f'{keyword} "{view.name}" AS {view.sql_text}')
            self._conn.commit()
        except sqlite3.ProgrammingError as exc:
            raise DataSourceConnectionError(str(exc)) from exc

    # -- bulk load (fixtures) ----------------------------------------------------

    def executescript(self, script: str) -> None:
        self._conn.executescript(script)
        self._conn.commit()


def topological_table_order(tables: list[TableMeta]) -> list[TableMeta]:
    """Order tables so every foreign key points at an earlier table.

    State validation requires FK targets to already exist when a table is
    added. Edges inside a dependency cycle are dropped from the metadata
    (with the remaining tables in name order) rather than rejecting the
    whole schema.
    """
    by_id = {t.table_id: t for t in tables}
    ordered: list[TableMeta] = []
    placed: set[str] = set()
    remaining = sorted(by_id)
    while remaining:
        progressed = False
        for table_id in list(remaining):
            table = by_id[table_id]
            deps = {fk.remote_table for fk in table.foreign_keys
                    if fk.remote_table != table_id and fk.remote_table in by_id}
            if deps <= placed:
                ordered.append(table)
                placed.add(table_id)
                remaining.remove(table_id)
                progressed = True
        if not progressed:  # FK cycle: keep the tables, drop the unplaceable edges
            for table_id in remaining:
                table = by_id[table_id]
                kept = tuple(fk for fk in table.foreign_keys
                             if fk.remote_table in placed or fk.remote_table == table_id)
                ordered.append(TableMeta(table.table_id, table.name, table.columns,
                                         table.row_count_estimate, kept))
                placed.add(table_id)
            break
    return ordered


def load_script(script_path: str, db_path: str) -> None:
    """Build a database file from a DDL+INSERT creation script."""
    with open(script_path, "r", encoding="utf-8") as fh:
        script = fh.read()
    if os.path.exists(db_path):
        os.remove(db_path)
    conn = sqlite3.connect(db_path)
    try:
        conn.executescript(script)
        conn.commit()
    finally:
        conn.close()
