"""Command-line entry points: scenario runner, suite runner, live service."""
from __future__ import annotations

import argparse
import logging
import sys
import threading
from pathlib import Path

from .simulator import ScenarioRunner, edge_coverage_report, run_suite


def _cmd_run(args: argparse.Namespace) -> int:
    runner = ScenarioRunner(Path(args.script), seed=args.seed)
    result = runner.run()
    for expectation in result.expectations:
        mark = "PASS" if expectation.passed else "FAIL"
        print(f"[{mark}] {expectation.description}")
        if not expectation.passed and expectation.detail:
            print(f"       {expectation.detail}")
    if args.transcript_out:
        Path(args.transcript_out).write_text(
            result.transcript_text(), encoding="utf-8"
        )
        print(f"transcript -> {args.transcript_out}")
    print(f"{result.name}: {'PASS' if result.passed else 'FAIL'}")
    return 0 if result.passed else 1


def _cmd_suite(args: argparse.Namespace) -> int:
    results = run_suite(Path(args.directory), seed=args.seed)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"[{status}] {result.name} ({len(result.expectations)} expectations)")
        if not result.passed:
            failed += 1
            for expectation in result.expectations:
                if not expectation.passed:
                    print(f"   FAIL {expectation.description}")
                    print(f"        {expectation.detail}")
    report = edge_coverage_report(results)
    print(report)
    if args.report:
        Path(args.report).write_text(report + "\n", encoding="utf-8")
    return 1 if failed else 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .clock import RealClock
    from .config import load_config
    from .http_api import create_app
    from .service import Orchestrator

    config = load_config(Path(args.config))
    orchestrator = Orchestrator(config, RealClock())
    replayed = orchestrator.bootstrap()
    logging.getLogger(__name__).info("started (%d events replayed)", replayed)

    stop = threading.Event()

    def scheduler_loop() -> None:
        while not stop.is_set():
            orchestrator.poll()
            stop.wait(config.scheduler_interval_s)

    thread = threading.Thread(target=scheduler_loop, daemon=True, name="scheduler")
    thread.start()
    try:
        uvicorn.run(create_app(orchestrator), host=args.host, port=args.port)
    finally:
        stop.set()
        thread.join(timeout=5)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(prog="expertloop")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario script")
    p_run.add_argument("script")
    p_run.add_argument("--transcript-out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=_cmd_run)

    p_suite = sub.add_parser("suite", help="run every scenario in a directory")
    p_suite.add_argument("directory")
    p_suite.add_argument("--seed", type=int, default=None)
    p_suite.add_argument("--report", default=None)
    p_suite.set_defaults(func=_cmd_suite)

    p_serve = sub.add_parser("serve", help="run the live HTTP service")
    p_serve.add_argument("--config", required=True)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
