"""Command line entry points.

  bluesim run <scenario> [--seed N] [--trace out.jsonl] [--metrics out.json]
                         [--decisions file.json]
  bluesim verify-table1 [--scenario path] [--trace out.jsonl]
  bluesim interactive <scenario> --listen host:port [--wall-timeout S]
                         [--linger S] [--trace out.jsonl] [--static dir]
  bluesim replay <trace.jsonl> [--kind k ...]

Scenario arguments accept either a file path or the name of a bundled
scenario (table1, table1-semi, clean, blind, quorum). Exit codes: 0 pass,
1 fail, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .engine import Engine, ScriptDecisionProvider
from .metrics import compute_metrics, format_event, parse_trace_jsonl, \
    records_to_dicts, verify_table1
from .scenario import ScenarioConfig, ScenarioError, load_builtin, load_scenario
from .server import AddressInUse, serve_interactive

BUILTIN_NAMES = ("table1", "table1-semi", "clean", "blind", "quorum")


def _load(ref: str) -> ScenarioConfig:
    if not Path(ref).exists() and ref in BUILTIN_NAMES:
        return load_builtin(ref)
    return load_scenario(ref)


def _write_or_print(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args.scenario)
    provider = None
    if args.decisions:
        provider = ScriptDecisionProvider(json.loads(Path(args.decisions).read_text()))
    engine = Engine(config, seed_override=args.seed, decision_provider=provider)
    engine.run()
    if args.trace:
        Path(args.trace).write_text(engine.trace_jsonl())
    if args.repository:
        rows = "".join(json.dumps(row, sort_keys=True) + "\n"
                       for row in engine.repository.dump())
        Path(args.repository).write_text(rows)
    metrics = compute_metrics(records_to_dicts(engine.sim.trace))
    metrics_json = json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.metrics:
        Path(args.metrics).write_text(metrics_json)
    print(f"scenario {config.name}: {len(engine.sim.trace)} events, "
          f"ended at t={engine.sim.now.format()}")
    if not args.metrics:
        sys.stdout.write(metrics_json)
    return 0


def cmd_verify_table1(args: argparse.Namespace) -> int:
    config = _load(args.scenario) if args.scenario else load_builtin("table1")
    engine = Engine(config)
    engine.run()
    if args.trace:
        Path(args.trace).write_text(engine.trace_jsonl())
    result = verify_table1(records_to_dicts(engine.sim.trace))
    if result.passed:
        print("verify-table1: PASS (all 11 milestones present, ordered, within 0.01 s)")
        return 0
    print(f"verify-table1: FAIL — {result.failure}")
    return 1


def cmd_interactive(args: argparse.Namespace) -> int:
    config = _load(args.scenario)
    if not any(b.policy.mode.value == "semi" for b in config.blue_agents):
        print("interactive mode needs at least one semiautonomous agent", file=sys.stderr)
        return 2
    host, _, port = args.listen.rpartition(":")
    static_dir = Path(args.static) if args.static else None
    try:
        session = serve_interactive(config, host or "127.0.0.1", int(port),
                                    wall_timeout=args.wall_timeout,
                                    linger=args.linger, static_dir=static_dir)
    except AddressInUse as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.trace:
        Path(args.trace).write_text(session.engine.trace_jsonl())
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    trace = parse_trace_jsonl(Path(args.trace).read_text())
    for event in trace:
        if args.kind and event["kind"] not in args.kind:
            continue
        print(format_event(event))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bluesim",
                                     description="autonomous cyber-defense engagement simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario headless")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--trace", help="write the trace as JSONL")
    run.add_argument("--metrics", help="write run metrics as JSON")
    run.add_argument("--decisions", help="scripted operator decisions (JSON list)")
    run.add_argument("--repository", help="write the lessons repository dump as JSONL")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify-table1",
                            help="run the baseline engagement and check its timeline")
    verify.add_argument("--scenario", default=None)
    verify.add_argument("--trace", help="also write the trace as JSONL")
    verify.set_defaults(func=cmd_verify_table1)

    interactive = sub.add_parser("interactive", help="run with the operator bridge")
    interactive.add_argument("scenario")
    interactive.add_argument("--listen", default="127.0.0.1:8717")
    interactive.add_argument("--wall-timeout", type=float, default=None,
                             help="wall seconds to wait per deferral (default: simulated window)")
    interactive.add_argument("--linger", type=float, default=None,
                             help="seconds to keep serving after the run ends")
    interactive.add_argument("--trace", help="write the trace as JSONL at the end")
    interactive.add_argument("--static", help="directory with the console build to serve")
    interactive.set_defaults(func=cmd_interactive)

    replay = sub.add_parser("replay", help="pretty-print a trace file")
    replay.add_argument("trace")
    replay.add_argument("--kind", action="append", help="only show these event kinds")
    replay.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
