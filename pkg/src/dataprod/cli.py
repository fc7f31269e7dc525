"""Command-line entry points: serve the control API, run a headless
optimization loop, and build fixture databases.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .connector import ConnectionProfile, load_script
from .errors import DataProdError, ValidationError
from .fixtures import build_retail_db, build_retail_script
from .metrics import Direction
from .runtime import AppConfig, AppRuntime
from .state import ContractEntry

DEFAULT_CONTRACT = [
    {"metric_id": "table_coverage", "target": 0.90, "comparator": ">="},
    {"metric_id": "column_coverage", "target": 0.50, "comparator": ">="},
    {"metric_id": "avg_exec_speed", "target": 5000.0, "comparator": "<="},
]


def _parse_contract(spec: str | None, runtime: AppRuntime) -> list[ContractEntry]:
    if spec is None:
        raw = DEFAULT_CONTRACT
    else:
        if os.path.exists(spec):
            with open(spec, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        else:
            raw = json.loads(spec)
    if isinstance(raw, dict):  # shorthand: {"table_coverage": 0.9, ...}
        assert runtime.engine is not None
        entries = []
        for metric_id, target in raw.items():
            direction = runtime.engine.definition(metric_id).direction
            comparator = ">=" if direction is Direction.MAXIMIZE else "<="
            entries.append(ContractEntry(metric_id, float(target), comparator))
        return entries
    if isinstance(raw, list):
        return [ContractEntry(e["metric_id"], float(e["target"]), e["comparator"])
                for e in raw]
    raise ValidationError("contract must be a JSON object or entry list")


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import create_app

    config = AppConfig.load(args.config)
    if args.listen:
        host, _, port = args.listen.rpartition(":")
        config.listen_host = host or config.listen_host
        config.listen_port = int(port)
    if args.db:
        config.db_path = args.db
    if args.store_dir:
        config.store_dir = args.store_dir
    if args.questions:
        config.questions_path = args.questions
    runtime = AppRuntime(config.store_dir)
    if config.db_path:
        profile = ConnectionProfile(
            config.db_path, statement_timeout_ms=config.statement_timeout_ms)
        summary = runtime.connect_datasource(profile, config.questions_path)
        print(f"connected: {summary}")
    ui_dir = args.ui_dir or os.environ.get("DATAPROD_UI_DIR")
    app = create_app(runtime, ui_dir=ui_dir)
    print(f"serving on http://{config.listen_host}:{config.listen_port}")
    uvicorn.run(app, host=config.listen_host, port=config.listen_port,
                log_level="warning")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    runtime = AppRuntime(args.store_dir)
    try:
        profile = ConnectionProfile(args.db, statement_timeout_ms=args.timeout_ms)
        summary = runtime.connect_datasource(profile, args.questions)
        if not args.json:
            print(f"connected to {args.db}: {summary['tables']} tables, "
                  f"{summary['columns']} columns, "
                  f"{summary['questions']} predefined question(s)")
        contract = _parse_contract(args.contract, runtime)
        runtime.put_contract(contract)
        report = runtime.run_headless({
            "max_iterations": args.max_iterations,
            "seed": args.seed,
        })
        if args.json:
            print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        else:
            print(f"verdict: {report.verdict} ({report.reason})")
            print(f"iterations: {len(report.iterations)}")
            for record in report.iterations:
                tool = record.proposal["tool_name"] if record.proposal else "-"
                print(f"  #{record.index} {tool:22s} {record.status:8s} "
                      f"gap={record.total_gap_after:.4f}")
            assert runtime.engine is not None
            gap = runtime.engine.gap(contract)
            print("final metrics:")
            for entry in gap.entries:
                shown = "unknown" if entry.value is None else f"{entry.value:.4f}"
                met = "met" if entry.normalized_gap == 0 else "unmet"
                print(f"  {entry.metric_id:22s} {shown:>10s} "
                      f"(target {entry.comparator} {entry.target:g}) {met}")
        return 0 if report.verdict == "converged" else 2
    finally:
        runtime.close()


def cmd_fixture(args: argparse.Namespace) -> int:
    if args.fixture_command == "load":
        load_script(args.script, args.database)
        print(f"built {args.database} from {args.script}")
    elif args.fixture_command == "init":
        build_retail_db(args.database)
        print(f"built retail fixture at {args.database}")
    elif args.fixture_command == "dump":
        with open(args.path, "w", encoding="utf-8") as fh:
            fh.write(build_retail_script())
        print(f"wrote retail creation script to {args.path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dataprod",
        description="Contract-driven data product optimization service")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="start the control API service")
    serve.add_argument("--config", help="JSON config file")
    serve.add_argument("--listen", help="host:port to bind")
    serve.add_argument("--db", help="connect this SQLite file at startup")
    serve.add_argument("--questions", help="predefined questions file")
    serve.add_argument("--store-dir", help="artifact/version store directory")
    serve.add_argument("--ui-dir", help="static dashboard assets to serve at /")
    serve.set_defaults(func=cmd_serve)

    run = sub.add_parser("run", help="run the optimization loop headless")
    run.add_argument("--db", required=True, help="SQLite database file")
    run.add_argument("--questions", help="predefined questions file")
    run.add_argument("--contract",
                     help="contract JSON (inline, or a file path); defaults to "
                          "coverage 0.9/0.5 and speed 5000ms")
    run.add_argument("--max-iterations", type=int, default=25)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--timeout-ms", type=int, default=5000)
    run.add_argument("--store-dir", default="./dataprod-store")
    run.add_argument("--json", action="store_true", help="emit the full report as JSON")
    run.set_defaults(func=cmd_run)

    fixture = sub.add_parser("fixture", help="fixture database utilities")
    fixture_sub = fixture.add_subparsers(dest="fixture_command", required=True)
    load = fixture_sub.add_parser("load", help="build a database from a script")
    load.add_argument("script")
    load.add_argument("database")
    init = fixture_sub.add_parser("init", help="build the shipped retail fixture")
    init.add_argument("database")
    dump = fixture_sub.add_parser("dump", help="write the retail creation script")
    dump.add_argument("path")
    fixture.set_defaults(func=cmd_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataProdError as exc:
        print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
