"""Command-line entry points.

  edgefleet run    --scenario s.json --out outdir   batch run + artifacts
  edgefleet serve  --scenario s.json --port 8787    live run + HTTP API
  edgefleet replay --events out/events.log          recheck health transitions

Exit codes: 0 success, 2 validation/usage error, 3 runtime failure. replay
uses 0 for a verified log, 1 for divergence, 2 for a corrupt log.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from .api import start_server
from .model import Policy
from .replay import ReplayCorruptError, replay_file
from .report import (
    build_summary,
    write_energy_csv,
    write_events_log,
    write_measurements_csv,
    write_summary_json,
)
from .runner import run_scenario
from .scenario import ScenarioValidationError, load_scenario


def _policy(name: Optional[str]) -> Optional[Policy]:
    if name is None:
        return None
    return Policy.auto_stop_on_suspicious if name == "auto" else Policy.manual


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--scenario", required=True, help="scenario JSON file")
    sub.add_argument("--seed", type=int, default=42, help="run seed (default 42)")
    sub.add_argument(
        "--speedup",
        type=float,
        default=None,
        help="simulated seconds per wall second (default: scenario value)",
    )
    sub.add_argument(
        "--policy",
        choices=["manual", "auto"],
        default=None,
        help="override the scenario's management policy",
    )


def _load(path: str):
    try:
        return load_scenario(path)
    except OSError as exc:
        raise ScenarioValidationError([f"$: cannot read {path} ({exc})"]) from exc


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    live = run_scenario(
        scenario,
        args.seed,
        policy=_policy(args.policy),
        paced=not args.no_pace,
        speedup=args.speedup,
    )
    baseline = run_scenario(scenario, args.seed, policy=Policy.manual)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_measurements_csv(out / "measurements.csv", live)
    write_energy_csv(out / "energy.csv", live, baseline)
    write_events_log(out / "events.log", live)
    summary = build_summary(live, baseline)
    write_summary_json(out / "summary.json", summary)

    for name in ("measurements.csv", "energy.csv", "events.log", "summary.json"):
        print(f"wrote {out / name}")
    if summary["delta_mA"] is not None:
        window = "post-fault" if summary["fleet_avg_current_mA"]["post_fault"] else "full-run"
        print(f"{window} average current saved: {summary['delta_mA']:.3f} mA")
    print(f"state changes: {len(summary['state_changes'])}, commands: {len(summary['commands'])}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario)
    static = Path(args.frontend) if args.frontend else None
    if static is not None and not static.is_dir():
        print(f"note: no dashboard at {static}, serving API only", file=sys.stderr)
        static = None
    handle = start_server(
        scenario,
        args.seed,
        host=args.host,
        port=args.port,
        policy=_policy(args.policy),
        speedup=args.speedup,
        static_dir=static,
    )
    print(f"serving on http://{args.host}:{handle.port}", flush=True)
    try:
        while handle.http_thread.is_alive():
            handle.http_thread.join(1.0)
    except KeyboardInterrupt:
        handle.stop()
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        result = replay_file(args.events)
    except OSError as exc:
        print(f"cannot read events log: {exc}", file=sys.stderr)
        return 2
    except ReplayCorruptError as exc:
        print(f"corrupt events log: {exc}", file=sys.stderr)
        return 2
    if result.divergence is not None:
        d = result.divergence
        print(f"replay diverged at line {d.line_no}: {d.message}", file=sys.stderr)
        if d.expected is not None:
            print(f"  recomputed: {json.dumps(d.expected, sort_keys=True)}", file=sys.stderr)
        if d.found is not None:
            print(f"  logged:     {json.dumps(d.found, sort_keys=True)}", file=sys.stderr)
        return 1
    note = (
        f", {len(result.unconfirmed)} pending beyond end of log" if result.unconfirmed else ""
    )
    print(f"replay ok: {result.confirmed} transitions confirmed{note}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgefleet",
        description="Emulated low-power sensor fleet with remote management",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write report artifacts")
    _add_common(run)
    run.add_argument("--out", default="out", help="artifact directory (default ./out)")
    run.add_argument(
        "--no-pace",
        action="store_true",
        help="run as fast as possible instead of pacing to the speedup",
    )
    run.set_defaults(func=_cmd_run)

    serve = sub.add_parser("serve", help="serve a live run over HTTP")
    _add_common(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8787)
    serve.add_argument(
        "--frontend",
        default="frontend/dist",
        help="static dashboard directory (default frontend/dist)",
    )
    serve.set_defaults(func=_cmd_serve)

    replay = sub.add_parser("replay", help="recheck an events.log")
    replay.add_argument("--events", required=True, help="events.log from a previous run")
    replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        for message in exc.errors:
            print(f"scenario error: {message}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
