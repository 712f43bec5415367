"""Command line entry points: headless runs, the live server, and the
acceptance suite."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .mission import MissionRunner, load_trace, run_mission
from .scenario import ScenarioError, load_scenario


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--scenario", required=True, help="scenario YAML file")
    parser.add_argument("--tree", help="behavior tree document")
    parser.add_argument("--trace", help="operator trace (JSON lines)")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="teleosim",
        description="Deterministic mobile-manipulator teleoperation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a mission headlessly and write logs")
    _add_common(run_p)
    run_p.add_argument("--out", required=True, help="output directory for logs")
    run_p.add_argument("--max-time", type=float, default=60.0, help="sim seconds to run")

    serve_p = sub.add_parser("serve", help="serve the live teleoperation loop")
    _add_common(serve_p)
    serve_p.add_argument("--port", type=int, default=8571)
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument(
        "--rate", type=float, default=1.0,
        help="real-time factor (1.0 = wall clock, 0 = as fast as possible)",
    )

    verify_p = sub.add_parser("verify", help="run the acceptance suite (needs a checkout)")
    verify_p.add_argument("pytest_args", nargs="*", help="extra pytest arguments")

    args = parser.parse_args(argv)

    if args.command == "verify":
        return _verify(args.pytest_args)

    try:
        scenario = load_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    tree_text = None
    if args.tree:
        tree_path = Path(args.tree)
        if not tree_path.exists():
            print(f"error: tree file not found: {tree_path}", file=sys.stderr)
            return 2
        tree_text = tree_path.read_text()
    trace = []
    if args.trace:
        trace_path = Path(args.trace)
        if not trace_path.exists():
            print(f"error: trace file not found: {trace_path}", file=sys.stderr)
            return 2
        trace = load_trace(trace_path)

    if args.command == "run":
        report = run_mission(
            scenario, tree_text, trace, args.out, seed=args.seed, max_time=args.max_time
        )
        print(json.dumps(report, indent=2, sort_keys=True))
        return 0 if report["completed"] else 1

    if args.command == "serve":
        from .server import TeleopServer

        runner = MissionRunner(scenario, tree_text=tree_text, trace=trace, seed=args.seed)
        server = TeleopServer(runner, host=args.host, port=args.port, rate=args.rate)
        print(f"serving on {args.host}:{args.port} (rate {args.rate}x)")
        server.serve_forever()
        return 0

    return 2  # pragma: no cover


def _verify(extra_args) -> int:
    import pytest

    tests_dir = _find_tests_dir()
    if tests_dir is None:
        print("error: acceptance tests not found; run from a source checkout",
              file=sys.stderr)
        return 2
    return pytest.main([str(tests_dir / "test_acceptance.py"), "-v", *extra_args])


def _find_tests_dir():
    for base in (Path.cwd(), *Path.cwd().parents, Path(__file__).resolve().parents[2]):
        candidate = base / "tests"
        if (candidate / "test_acceptance.py").exists():
            return candidate
    return None


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
