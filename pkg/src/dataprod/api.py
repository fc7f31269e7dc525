"""HTTP service boundary: state, metrics, catalog, run control, approvals,
and a resumable server-push event stream.

All wire payloads are JSON with stable field names; proposal payloads use
exactly the planner's field names. Errors carry machine-readable codes as
``{"error": {"code": ..., "message": ...}}``.
"""

from __future__ import annotations

import json
import os
import queue
import time
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .connector import ConnectionProfile
from .errors import DataProdError, NotFoundError, ValidationError
from .runtime import AppRuntime
from .state import ContractEntry

_STATUS_BY_CODE = {
    "validation_error": 400,
    "parameter_bounds": 400,
    "connection_error": 400,
    "empty_schema": 400,
    "sql_parse_error": 400,
    "not_found": 404,
    "unknown_metric": 404,
    "unknown_question": 404,
    "unknown_tool": 404,
    "unknown_iteration": 404,
    "missing_value": 409,
    "not_connected": 409,
    "busy": 409,
    "invalid_transition": 409,
    "duplicate_metric": 409,
    "duplicate_tool": 409,
    "duplicate_identifier": 409,
    "name_collision": 409,
    "no_pending_approval": 409,
}

HEARTBEAT_SECONDS = 2.0


def create_app(runtime: AppRuntime, ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="dataprod control api", docs_url=None, redoc_url=None)

    @app.exception_handler(DataProdError)
    async def _domain_error(_request: Request, exc: DataProdError):
        status = _STATUS_BY_CODE.get(exc.code, 400)
        return JSONResponse(status_code=status,
                            content={"error": {"code": exc.code,
                                               "message": exc.message}})

    # -- datasource -----------------------------------------------------------

    @app.post("/api/v1/datasource")
    async def connect_datasource(request: Request):
        body = await request.json()
        if "location" not in body:
            raise ValidationError("profile requires a 'location'")
        profile = ConnectionProfile(
            location=body["location"],
            kind=body.get("kind", "sqlite"),
            read_only=bool(body.get("read_only", False)),
            statement_timeout_ms=int(body.get("statement_timeout_ms", 5000)),
        )
        return runtime.connect_datasource(profile, body.get("questions_path"))

    # -- reads -----------------------------------------------------------------

    @app.get("/api/v1/state")
    def get_state():
        return runtime.state_payload()

    @app.get("/api/v1/metrics")
    def get_metrics(scope: Optional[str] = None):
        return runtime.metrics_payload(scope)

    @app.get("/api/v1/metrics/{metric_id}/history")
    def get_metric_history(metric_id: str):
        return runtime.metric_history_payload(metric_id)

    @app.get("/api/v1/tools")
    def get_tools():
        return runtime.tools_payload()

    @app.get("/api/v1/questions")
    def get_questions():
        return runtime.questions_payload()

    @app.get("/api/v1/topics")
    def get_topics():
        return runtime.topics_payload()

    @app.get("/api/v1/commits")
    def get_commits():
        return runtime.commits_payload()

    @app.get("/api/v1/run/journal")
    def get_journal():
        return runtime.journal_payload()

    @app.get("/api/v1/run/report")
    def get_report():
        report = runtime.last_report
        if report is None:
            raise NotFoundError("no run has completed yet")
        return report.to_dict()

    # -- contract ----------------------------------------------------------------

    @app.get("/api/v1/contract")
    def get_contract():
        return {
            "entries": [
                {"metric_id": e.metric_id, "target": e.target,
                 "comparator": e.comparator}
                for e in runtime.contract
            ]
        }

    @app.put("/api/v1/contract")
    async def put_contract(request: Request):
        body = await request.json()
        entries = body.get("entries")
        if not isinstance(entries, list) or not entries:
            raise ValidationError("contract requires a non-empty 'entries' list")
        parsed = []
        for entry in entries:
            try:
                parsed.append(ContractEntry(
                    metric_id=entry["metric_id"],
                    target=float(entry["target"]),
                    comparator=entry["comparator"],
                ))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"bad contract entry: {exc}") from exc
        gap = runtime.put_contract(parsed)
        return gap.to_payload()

    # -- run control ----------------------------------------------------------------

    @app.post("/api/v1/run/start")
    async def run_start(request: Request):
        body = await request.json() if await _has_body(request) else {}
        return runtime.start_run(body)

    @app.post("/api/v1/run/pause")
    def run_pause():
        return runtime.pause_run()

    @app.post("/api/v1/run/resume")
    def run_resume():
        return runtime.resume_run()

    @app.post("/api/v1/run/stop")
    def run_stop():
        return runtime.stop_run()

    @app.post("/api/v1/run/step")
    async def run_step(request: Request):
        body = await request.json() if await _has_body(request) else {}
        return runtime.step_run(body)

    # -- approvals ---------------------------------------------------------------------

    @app.get("/api/v1/approvals")
    def list_approvals():
        return runtime.approvals_payload()

    @app.post("/api/v1/approvals/{iteration}")
    async def post_approval(iteration: int, request: Request):
        body = await request.json()
        decision = body.get("decision")
        actor = body.get("actor", "human")
        runtime.require_connected()
        assert runtime.orchestrator is not None
        runtime.orchestrator.resolve_approval(iteration, decision, actor)
        return {"iteration": iteration, "decision": decision, "actor": actor}

    # -- event stream ----------------------------------------------------------------------

    @app.get("/api/v1/events")
    def stream_events(since: int = 0, max_events: Optional[int] = None,
                      max_seconds: Optional[float] = None,
                      heartbeat_s: float = HEARTBEAT_SECONDS):
        """Server-push stream of sequence-numbered events (SSE framing).

        Reconnect with ``since=<last seq>`` to resume without loss; delivery
        is at-least-once and consumers dedup by sequence number.
        ``max_events`` / ``max_seconds`` bound the stream for polling clients
        and tests; without them the stream stays open with heartbeats.
        """
        def generate():
            subscription = runtime.bus.subscribe()
            started = time.monotonic()
            sent = 0
            try:
                last = since
                for event in runtime.bus.since(since):
                    yield _sse(event)
                    last = event["seq"]
                    sent += 1
                    if max_events is not None and sent >= max_events:
                        return
                while True:
                    if max_seconds is not None and time.monotonic() - started >= max_seconds:
                        return
                    try:
                        event = subscription.get(timeout=heartbeat_s)
                    except queue.Empty:
                        yield ": heartbeat\n\n"
                        continue
                    if event["seq"] <= last:
                        continue
                    yield _sse(event)
                    last = event["seq"]
                    sent += 1
                    if max_events is not None and sent >= max_events:
                        return
            finally:
                runtime.bus.unsubscribe(subscription)

        return StreamingResponse(generate(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def _sse(event: dict) -> str:
    return (f"id: {event['seq']}\n"
            f"event: {event['kind']}\n"
            f"data: {json.dumps(event, sort_keys=True)}\n\n")


async def _has_body(request: Request) -> bool:
    body = await request.body()
    return bool(body.strip())
