"""Run artifacts: measurements.csv, energy.csv, events.log, summary.json.

The live run is always paired with a baseline twin (same scenario and seed,
no actions taken) so energy comparisons and the headline delta are available
in every report. All numbers are serialized at full float precision; the
writers are deterministic so identical runs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
from collections import Counter
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .energy import EnergyTrace
from .model import MS_PER_S, s_from_ms
from .runner import RunResult


def write_measurements_csv(path: str | Path, result: RunResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "service_id", "timestamp_s", "value", "code_version"])
        for m in result.measurements:
            writer.writerow(
                [m.device_id, m.service_id, repr(m.timestamp_s), repr(m.value), m.code_version]
            )


def write_energy_csv(path: str | Path, live: RunResult, baseline: RunResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["device_id", "window_start_s", "window_end_s", "variant", "avg_current_mA"])
        for device_id in sorted(live.traces):
            live_trace = live.traces[device_id]
            base_trace = baseline.traces[device_id]
            for idx in range(live_trace.window_count):
                start, end = live_trace.window_bounds(idx)
                for variant, trace in (("live", live_trace), ("baseline", base_trace)):
                    avg = float(trace.window_charge(idx).avg_current_mA())
                    writer.writerow(
                        [device_id, repr(s_from_ms(start)), repr(s_from_ms(end)), variant, repr(avg)]
                    )


def write_events_log(path: str | Path, result: RunResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in result.events:
            fh.write(json.dumps(event, sort_keys=True, allow_nan=False) + "\n")


def _avg_mA(trace: EnergyTrace, a_ms: int, b_ms: int) -> Fraction:
    return trace.charge_between(a_ms, b_ms) * MS_PER_S / (b_ms - a_ms)


def _window_block(
    live: EnergyTrace, base: EnergyTrace, a_ms: int, b_ms: int
) -> dict:
    live_avg = _avg_mA(live, a_ms, b_ms)
    base_avg = _avg_mA(base, a_ms, b_ms)
    return {
        "start_s": s_from_ms(a_ms),
        "end_s": s_from_ms(b_ms),
        "live_mA": float(live_avg),
        "baseline_mA": float(base_avg),
        "delta_mA": float(base_avg - live_avg),
    }


def _fleet_block(
    live: dict[str, EnergyTrace], base: dict[str, EnergyTrace], a_ms: int, b_ms: int
) -> dict:
    live_total = sum((t.charge_between(a_ms, b_ms) for t in live.values()), Fraction(0))
    base_total = sum((t.charge_between(a_ms, b_ms) for t in base.values()), Fraction(0))
    span = b_ms - a_ms
    live_avg = live_total * MS_PER_S / span
    base_avg = base_total * MS_PER_S / span
    return {
        "start_s": s_from_ms(a_ms),
        "end_s": s_from_ms(b_ms),
        "live_mA": float(live_avg),
        "baseline_mA": float(base_avg),
        "delta_mA": float(base_avg - live_avg),
    }


def build_summary(live: RunResult, baseline: RunResult) -> dict:
    scenario = live.scenario
    duration_ms = scenario.duration_ms
    boundary_ms: Optional[int] = (
        min(f.start_ms for f in scenario.faults) if scenario.faults else None
    )
    counts = Counter((m.device_id, m.service_id) for m in live.measurements)

    devices: dict[str, dict] = {}
    snapped: set[Optional[int]] = set()
    for device_id in sorted(live.traces):
        live_trace = live.traces[device_id]
        base_trace = baseline.traces[device_id]
        windows: dict[str, Optional[dict]] = {
            "full": _window_block(live_trace, base_trace, 0, duration_ms)
        }
        snap: Optional[int] = None
        if boundary_ms is not None:
            snap = boundary_ms - (boundary_ms % live_trace.window_ms)
            if 0 < snap < duration_ms:
                windows["pre_fault"] = _window_block(live_trace, base_trace, 0, snap)
                windows["post_fault"] = _window_block(live_trace, base_trace, snap, duration_ms)
            else:
                snap = None
        snapped.add(snap)
        windows.setdefault("pre_fault", None)
        windows.setdefault("post_fault", None)

        runtime = live.devices[device_id]
        services: dict[str, dict] = {}
        for sid in sorted(runtime.lifecycle_snapshot()):
            rec = live.control.record(device_id, sid)
            services[sid] = {
                "lifecycle": runtime.lifecycle(sid).value,
                "code_version": runtime.code_version(sid),
                "health_state": rec.health.state.value if rec else None,
                "last_reason": rec.health.last_reason.value if rec else None,
                "measurement_count": counts.get((device_id, sid), 0),
            }
        devices[device_id] = {"windows": windows, "services": services}

    fleet: dict[str, Optional[dict]] = {"pre_fault": None, "post_fault": None}
    if live.traces:
        fleet["full"] = _fleet_block(live.traces, baseline.traces, 0, duration_ms)
        common = snapped.pop() if len(snapped) == 1 else None
        if common is not None:
            fleet["pre_fault"] = _fleet_block(live.traces, baseline.traces, 0, common)
            fleet["post_fault"] = _fleet_block(live.traces, baseline.traces, common, duration_ms)
    else:
        fleet["full"] = None

    headline = None
    if fleet.get("post_fault"):
        headline = fleet["post_fault"]["delta_mA"]
    elif fleet.get("full"):
        headline = fleet["full"]["delta_mA"]

    return {
        "seed": live.seed,
        "policy": live.policy.value,
        "speedup": live.speedup,
        "duration_s": scenario.duration_s,
        "fault_boundary_s": s_from_ms(boundary_ms) if boundary_ms is not None else None,
        "devices": devices,
        "fleet_avg_current_mA": fleet,
        "delta_mA": headline,
        "state_changes": list(live.state_changes),
        "commands": [entry.as_dict() for entry in live.audit],
    }


def write_summary_json(path: str | Path, summary: dict) -> None:
    Path(path).write_text(
        json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8"
    )


def write_run_artifacts(out_dir: str | Path, live: RunResult, baseline: RunResult) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "measurements": out / "measurements.csv",
        "energy": out / "energy.csv",
        "events": out / "events.log",
        "summary": out / "summary.json",
    }
    write_measurements_csv(paths["measurements"], live)
    write_energy_csv(paths["energy"], live, baseline)
    write_events_log(paths["events"], live)
    write_summary_json(paths["summary"], build_summary(live, baseline))
    return paths
