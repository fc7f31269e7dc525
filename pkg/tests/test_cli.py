from __future__ import annotations

import json
import sqlite3

from dataprod.cli import main
from dataprod.fixtures import build_retail_script


def test_fixture_dump_and_load(tmp_path, capsys):
    script = tmp_path / "retail.sql"
    db = tmp_path / "retail.db"
    assert main(["fixture", "dump", str(script)]) == 0
    assert script.read_text() == build_retail_script()
    assert main(["fixture", "load", str(script), str(db)]) == 0
    conn = sqlite3.connect(str(db))
    tables = {row[0] for row in conn.execute(
        "SELECT name FROM sqlite_master WHERE type='table'")}
    conn.close()
    assert "orders" in tables and len(tables) == 6


def test_fixture_init(tmp_path):
    db = tmp_path / "retail.db"
    assert main(["fixture", "init", str(db)]) == 0
    assert db.exists()


def test_headless_run_converges(tmp_path, capsys):
    db = tmp_path / "retail.db"
    main(["fixture", "init", str(db)])
    code = main(["run", "--db", str(db), "--store-dir", str(tmp_path / "store"),
                 "--max-iterations", "15"])
    out = capsys.readouterr().out
    assert code == 0
    assert "verdict: converged" in out
    assert "table_coverage" in out and "met" in out


def test_headless_run_json_report(tmp_path, capsys):
    db = tmp_path / "retail.db"
    main(["fixture", "init", str(db)])
    code = main(["run", "--db", str(db), "--store-dir", str(tmp_path / "store"),
                 "--max-iterations", "15", "--json",
                 "--contract", '{"table_coverage": 0.9, "column_coverage": 0.5}'])
    assert code == 0
    out = capsys.readouterr().out
    start = out.index("{")
    report = json.loads(out[start:])
    assert report["verdict"] == "converged"
    assert report["iterations"]


def test_run_reports_budget_exhaustion(tmp_path, capsys):
    db = tmp_path / "retail.db"
    main(["fixture", "init", str(db)])
    code = main(["run", "--db", str(db), "--store-dir", str(tmp_path / "store"),
                 "--max-iterations", "1"])
    assert code == 2
    assert "budget_exhausted" in capsys.readouterr().out


def test_bad_database_path_errors(tmp_path, capsys):
    code = main(["run", "--db", str(tmp_path / "missing.db"),
                 "--store-dir", str(tmp_path / "store")])
    assert code == 1
    assert "connection_error" in capsys.readouterr().err
