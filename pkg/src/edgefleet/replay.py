"""Recompute health transitions from an events.log and check them against the
state_change lines recorded in the same log.

The log is the single input: the header carries the resolved detector
parameters for every service, lifecycle lines carry state facts, measurement
lines are post-transport, and eval lines mark each evaluation instant. A
truncated log is treated as a valid prefix; transitions the recomputation
produces after the last logged line are reported as unconfirmed rather than
as divergence.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .control import ControlPlane
from .model import DetectorParams, Measurement, Policy, ms_from_s


class ReplayCorruptError(Exception):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


@dataclass(frozen=True)
class ReplayDivergence:
    line_no: Optional[int]
    expected: Optional[dict]
    found: Optional[dict]
    message: str


@dataclass
class ReplayResult:
    confirmed: int = 0
    unconfirmed: list = field(default_factory=list)
    divergence: Optional[ReplayDivergence] = None

    @property
    def ok(self) -> bool:
        return self.divergence is None


_REQUIRED_FIELDS: dict[str, set[str]] = {
    "run_header": {"seed", "policy", "speedup", "duration_s", "devices"},
    "lifecycle": {
        "device_id",
        "service_id",
        "action",
        "state",
        "code_version",
        "interval_s",
        "timestamp_s",
    },
    "ack": {"device_id", "service_id", "command_id", "action", "ok", "timestamp_s"},
    "fault_armed": {"device_id", "service_id", "fault_kind", "start_s", "timestamp_s"},
    "measurement": {"device_id", "service_id", "timestamp_s", "value", "code_version"},
    "command": {"device_id", "service_id", "action", "command_id", "t_s"},
    "recommendation": {"device_id", "service_id", "action", "reason", "t_s"},
    "eval": {"device_id", "t_s"},
    "state_change": {"device_id", "service_id", "state", "since_s", "reason", "t_s"},
    "energy_window": {
        "device_id",
        "window_start_s",
        "window_end_s",
        "variant",
        "avg_current_mA",
    },
    "run_end": {"t_s"},
}

# Emitted synchronously while an evaluation is still producing state changes,
# so they may legally sit between a change and the next one.
_EVAL_INTERLEAVED = {"command", "recommendation"}

_CHANGE_KEYS = ("device_id", "service_id", "state", "since_s", "reason", "t_s")


def _parse_line(line_no: int, raw: str) -> dict:
    try:
        event = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ReplayCorruptError(line_no, f"not valid JSON ({exc.msg})") from exc
    if not isinstance(event, dict):
        raise ReplayCorruptError(line_no, "event is not a JSON object")
    kind = event.get("type")
    if kind not in _REQUIRED_FIELDS:
        raise ReplayCorruptError(line_no, f"unknown event type {kind!r}")
    missing = _REQUIRED_FIELDS[kind] - event.keys()
    if missing:
        raise ReplayCorruptError(line_no, f"{kind} event missing {sorted(missing)}")
    return event


def _params_from_header(header: dict, line_no: int) -> tuple[list[str], DetectorParams]:
    devices = header["devices"]
    if not isinstance(devices, dict):
        raise ReplayCorruptError(line_no, "run_header devices must be an object")
    per_service: dict[str, dict] = {}
    for device_id, body in devices.items():
        services = body.get("services") if isinstance(body, dict) else None
        if not isinstance(services, dict):
            raise ReplayCorruptError(line_no, f"run_header device {device_id!r} has no services")
        for service_id, svc in services.items():
            params = svc.get("params") if isinstance(svc, dict) else None
            if not isinstance(params, dict):
                raise ReplayCorruptError(
                    line_no, f"run_header service {device_id}/{service_id} has no params"
                )
            per_service[f"{device_id}/{service_id}"] = dict(params)
    return list(devices), DetectorParams(per_service=per_service)


def _change_key(event: dict) -> tuple:
    return tuple(event[k] for k in _CHANGE_KEYS)


def replay_events(lines: Iterable[str]) -> ReplayResult:
    result = ReplayResult()
    pending: deque[dict] = deque()
    control: Optional[ControlPlane] = None

    def capture(event: dict) -> None:
        if event.get("type") == "state_change":
            pending.append(event)

    line_no = 0
    for raw in lines:
        line_no += 1
        stripped = raw.strip()
        if not stripped:
            raise ReplayCorruptError(line_no, "blank line")
        event = _parse_line(line_no, stripped)
        kind = event["type"]

        if control is None:
            if kind != "run_header":
                raise ReplayCorruptError(line_no, "first line must be a run_header")
            device_ids, params = _params_from_header(event, line_no)
            # Manual policy: replay must never issue commands of its own; the
            # log's lifecycle lines already carry every state fact.
            control = ControlPlane(device_ids, Policy.manual, params, emit=capture)
            continue
        if kind == "run_header":
            raise ReplayCorruptError(line_no, "duplicate run_header")

        if kind == "state_change":
            if not pending:
                result.divergence = ReplayDivergence(
                    line_no, None, event, "logged transition was not reproduced"
                )
                return result
            expected = pending.popleft()
            if _change_key(expected) != _change_key(event):
                result.divergence = ReplayDivergence(
                    line_no, expected, event, "transition differs from recomputation"
                )
                return result
            result.confirmed += 1
            continue

        if pending and kind not in _EVAL_INTERLEAVED:
            result.divergence = ReplayDivergence(
                line_no,
                pending[0],
                event,
                "recomputed transition missing from the log",
            )
            return result

        try:
            if kind == "lifecycle":
                control.on_lifecycle(event["device_id"], event)
            elif kind == "measurement":
                control.ingest(
                    Measurement(
                        device_id=event["device_id"],
                        service_id=event["service_id"],
                        timestamp_ms=ms_from_s(event["timestamp_s"]),
                        value=event["value"],
                        code_version=event["code_version"],
                    )
                )
            elif kind == "eval":
                control.evaluate(event["device_id"], ms_from_s(event["t_s"]))
        except (ValueError, TypeError, KeyError) as exc:
            raise ReplayCorruptError(line_no, f"{kind} event unusable: {exc}") from exc

    if control is None:
        raise ReplayCorruptError(1, "empty log")
    result.unconfirmed = list(pending)
    return result


def replay_file(path: str | Path) -> ReplayResult:
    with open(path, "r", encoding="utf-8") as fh:
        return replay_events(fh)
