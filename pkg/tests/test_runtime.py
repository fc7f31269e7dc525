from __future__ import annotations

import json

import pytest

from dataprod.connector import ConnectionProfile
from dataprod.errors import ValidationError
from dataprod.runtime import AppConfig, AppRuntime, derive_targets, load_questions_file


@pytest.fixture
def runtime(tmp_path, retail_db_path):
    rt = AppRuntime(str(tmp_path / "store"))
    rt.connect_datasource(ConnectionProfile(retail_db_path))
    yield rt
    rt.close()


def test_config_file_then_env_overrides(tmp_path):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps({
        "listen_port": 9000, "store_dir": "/from/file", "seed": 7}))
    config = AppConfig.load(str(config_path), env={
        "DATAPROD_STORE_DIR": "/from/env",
        "DATAPROD_MAX_ITERATIONS": "12",
    })
    assert config.listen_port == 9000      # file value kept
    assert config.store_dir == "/from/env" # env wins over file
    assert config.max_iterations == 12
    assert config.seed == 7


def test_config_defaults_without_sources():
    config = AppConfig.load(None, env={})
    assert config.listen_port == 8640
    assert config.approval_mode == "auto"


def test_questions_file_formats(tmp_path):
    as_json = tmp_path / "q.json"
    as_json.write_text(json.dumps([
        "How many orders are there?",
        {"text": "Total by city?", "targets": [{"table": "customers", "column": "city"}]},
    ]))
    parsed = load_questions_file(str(as_json))
    assert parsed[0] == {"text": "How many orders are there?"}
    assert parsed[1]["targets"][0]["table"] == "customers"

    as_text = tmp_path / "q.txt"
    as_text.write_text("first question\n\nsecond question\n")
    assert [q["text"] for q in load_questions_file(str(as_text))] == [
        "first question", "second question"]

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps([{"no_text": 1}]))
    with pytest.raises(ValidationError):
        load_questions_file(str(bad))


def test_derive_targets_matches_names(runtime):
    state = runtime.store.snapshot()
    targets = derive_targets(state, "What is the total total_amount by status in orders?")
    pairs = {(t.table_id, t.column) for t in targets}
    assert ("orders", "total_amount") in pairs
    assert ("orders", "status") in pairs
    # table mentioned without any column: table-level target
    targets = derive_targets(state, "Tell me about suppliers")
    assert {(t.table_id, t.column) for t in targets} == {("suppliers", None)}


def test_metrics_payload_scope_filter(runtime):
    everything = runtime.metrics_payload()
    database_only = runtime.metrics_payload("database")
    one_table = runtime.metrics_payload("table:orders")
    assert len(database_only["values"]) < len(everything["values"])
    assert all(v["scope"] == "database" for v in database_only["values"])
    assert [v["metric_id"] for v in one_table["values"]] == ["column_coverage"]


def test_event_bus_since_and_subscribe(runtime):
    bus = runtime.bus
    base = bus.last_seq
    queue = bus.subscribe()
    bus.emit("MetricUpdated", {"n": 1})
    bus.emit("CommitCreated", {"n": 2})
    assert [e["payload"]["n"] for e in bus.since(base)] == [1, 2]
    assert queue.get(timeout=1)["payload"]["n"] == 1
    assert queue.get(timeout=1)["payload"]["n"] == 2
    bus.unsubscribe(queue)
    bus.emit("CommitCreated", {"n": 3})
    assert queue.empty()
