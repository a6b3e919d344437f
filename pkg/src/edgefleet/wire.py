"""Wire layer: topic grammar, payload schemas, and framed encoding.

Topics:
    dev/<device_id>/svc/<service_id>/measurement
    dev/<device_id>/svc/<service_id>/cmd
    dev/<device_id>/svc/<service_id>/event
    dev/<device_id>/energy

A frame is a 4-byte big-endian length prefix followed by the UTF-8 JSON of
{"topic", "publish_time_s", "payload"}. Payloads are capped at 4 KiB and
validated strictly in both directions: unknown fields, ids that disagree with
the topic, and non-finite numbers are rejected.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Any, Optional

from .model import (
    FaultKind,
    LifecycleAction,
    LifecycleState,
    Measurement,
    ms_from_s,
    s_from_ms,
)
from .model import ServiceDescriptor
from .scenario import service_to_raw

MAX_PAYLOAD_BYTES = 4096
MAX_FRAME_BYTES = 1 << 20

_CHANNELS = ("measurement", "cmd", "event")
_ACTIONS = {a.value for a in LifecycleAction}
_STATES = {s.value for s in LifecycleState}
_VARIANTS = {"live", "baseline"}


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class ParsedTopic:
    device_id: str
    service_id: Optional[str]
    channel: str


@dataclass(frozen=True)
class BusMessage:
    topic: str
    payload: dict
    publish_time_s: float


@dataclass(frozen=True)
class CommandPayload:
    action: str
    command_id: str
    service_id: str  # carried by the topic, not the payload body
    descriptor: Optional[ServiceDescriptor] = None


def make_topic(device_id: str, channel: str, service_id: Optional[str] = None) -> str:
    if channel == "energy":
        return f"dev/{device_id}/energy"
    return f"dev/{device_id}/svc/{service_id}/{channel}"


def parse_topic(topic: str) -> ParsedTopic:
    parts = topic.split("/")
    if len(parts) == 3 and parts[0] == "dev" and parts[2] == "energy" and parts[1]:
        return ParsedTopic(parts[1], None, "energy")
    if (
        len(parts) == 5
        and parts[0] == "dev"
        and parts[2] == "svc"
        and parts[4] in _CHANNELS
        and parts[1]
        and parts[3]
    ):
        return ParsedTopic(parts[1], parts[3], parts[4])
    raise WireError(f"malformed topic {topic!r}")


def _require(payload: dict, required: dict[str, Any], optional: dict[str, Any] = {}) -> None:
    for key in payload:
        if key not in required and key not in optional:
            raise WireError(f"unknown payload field {key!r}")
    for key, check in required.items():
        if key not in payload:
            raise WireError(f"missing payload field {key!r}")
        check(key, payload[key])
    for key, check in optional.items():
        if key in payload:
            check(key, payload[key])


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _number(minimum: Optional[float] = None):
    def check(key: str, v: Any) -> None:
        if not _is_number(v) or not math.isfinite(v):
            raise WireError(f"field {key!r} must be a finite number")
        if minimum is not None and v < minimum:
            raise WireError(f"field {key!r} must be >= {minimum}")

    return check


def _integer(minimum: int = 0):
    def check(key: str, v: Any) -> None:
        if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
            raise WireError(f"field {key!r} must be an integer >= {minimum}")

    return check


def _string(values: Optional[set[str]] = None, non_empty: bool = True):
    def check(key: str, v: Any) -> None:
        if not isinstance(v, str) or (non_empty and not v):
            raise WireError(f"field {key!r} must be a non-empty string")
        if values is not None and v not in values:
            raise WireError(f"field {key!r} must be one of {sorted(values)}")

    return check


def _boolean(key: str, v: Any) -> None:
    if not isinstance(v, bool):
        raise WireError(f"field {key!r} must be a boolean")


def _equals(expected: str):
    def check(key: str, v: Any) -> None:
        if v != expected:
            raise WireError(f"field {key!r} must equal {expected!r} from the topic")

    return check


def _validate_descriptor(key: str, raw: Any) -> None:
    from .scenario import _Checker, parse_service  # deferred to keep import small

    c = _Checker()
    svc = parse_service(c, raw, key)
    if svc is None:
        raise WireError(f"invalid descriptor: {'; '.join(c.errors)}")


def validate_payload(parsed: ParsedTopic, payload: dict) -> None:
    if not isinstance(payload, dict):
        raise WireError("payload must be an object")
    if parsed.channel == "measurement":
        _require(
            payload,
            {
                "device_id": _equals(parsed.device_id),
                "service_id": _equals(parsed.service_id),
                "timestamp_s": _number(minimum=0.0),
                "value": _number(),
                "code_version": _integer(),
            },
        )
    elif parsed.channel == "cmd":
        _require(
            payload,
            {
                "action": _string(_ACTIONS),
                "command_id": _string(),
            },
            {"descriptor": _validate_descriptor},
        )
        needs_descriptor = payload["action"] in ("install", "update")
        if needs_descriptor != ("descriptor" in payload):
            raise WireError("descriptor is required for install/update and forbidden otherwise")
        if needs_descriptor and payload["descriptor"].get("service_id") != parsed.service_id:
            raise WireError("descriptor service_id must match the topic")
    elif parsed.channel == "event":
        kind = payload.get("kind")
        if kind == "ack":
            _require(
                payload,
                {
                    "kind": _string({"ack"}),
                    "command_id": _string(),
                    "action": _string(_ACTIONS),
                    "service_id": _equals(parsed.service_id),
                    "ok": _boolean,
                    "state": _string(_STATES | {"absent"}),
                    "timestamp_s": _number(minimum=0.0),
                },
                {
                    "code_version": _integer(),
                    "interval_s": _number(minimum=0.0),
                    "error": _string(),
                },
            )
        elif kind == "lifecycle":
            _require(
                payload,
                {
                    "kind": _string({"lifecycle"}),
                    "action": _string(_ACTIONS),
                    "service_id": _equals(parsed.service_id),
                    "state": _string(_STATES),
                    "code_version": _integer(),
                    "interval_s": _number(minimum=0.0),
                    "timestamp_s": _number(minimum=0.0),
                },
            )
        elif kind == "fault_armed":
            _require(
                payload,
                {
                    "kind": _string({"fault_armed"}),
                    "service_id": _equals(parsed.service_id),
                    "fault_kind": _string({f.value for f in FaultKind}),
                    "start_s": _number(minimum=0.0),
                    "timestamp_s": _number(minimum=0.0),
                },
            )
        else:
            raise WireError(f"unknown event kind {kind!r}")
    else:  # energy
        _require(
            payload,
            {
                "device_id": _equals(parsed.device_id),
                "window_start_s": _number(minimum=0.0),
                "window_end_s": _number(minimum=0.0),
                "variant": _string(_VARIANTS),
                "avg_current_mA": _number(minimum=0.0),
            },
        )
        if payload["window_end_s"] <= payload["window_start_s"]:
            raise WireError("window_end_s must be greater than window_start_s")


def encode(message: BusMessage) -> bytes:
    parsed = parse_topic(message.topic)
    validate_payload(parsed, message.payload)
    if not _is_number(message.publish_time_s) or message.publish_time_s < 0:
        raise WireError("publish_time_s must be a non-negative number")
    try:
        payload_bytes = json.dumps(
            message.payload, allow_nan=False, separators=(",", ":"), sort_keys=True
        ).encode("utf-8")
    except ValueError as exc:
        raise WireError(f"payload not serializable: {exc}") from exc
    if len(payload_bytes) > MAX_PAYLOAD_BYTES:
        raise WireError(f"payload is {len(payload_bytes)} bytes, cap is {MAX_PAYLOAD_BYTES}")
    body = json.dumps(
        {
            "topic": message.topic,
            "publish_time_s": message.publish_time_s,
            "payload": message.payload,
        },
        allow_nan=False,
        separators=(",", ":"),
        sort_keys=True,
    ).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def decode(data: bytes) -> BusMessage:
    if len(data) < 4:
        raise WireError("frame shorter than its length prefix")
    (length,) = struct.unpack(">I", data[:4])
    if length > MAX_FRAME_BYTES:
        raise WireError("frame length exceeds sanity cap")
    if len(data) != 4 + length:
        raise WireError(f"frame length prefix says {length}, got {len(data) - 4} bytes")
    try:
        obj = json.loads(data[4:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WireError(f"frame body is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or set(obj) != {"topic", "publish_time_s", "payload"}:
        raise WireError("frame body must carry exactly topic, publish_time_s, payload")
    topic = obj["topic"]
    if not isinstance(topic, str):
        raise WireError("topic must be a string")
    parsed = parse_topic(topic)
    payload = obj["payload"]
    validate_payload(parsed, payload)
    publish_time = obj["publish_time_s"]
    if not _is_number(publish_time) or not math.isfinite(publish_time) or publish_time < 0:
        raise WireError("publish_time_s must be a non-negative number")
    payload_bytes = json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8")
    if len(payload_bytes) > MAX_PAYLOAD_BYTES:
        raise WireError(f"payload is {len(payload_bytes)} bytes, cap is {MAX_PAYLOAD_BYTES}")
    return BusMessage(topic=topic, payload=payload, publish_time_s=publish_time)


# -- payload converters ------------------------------------------------------


def measurement_to_payload(m: Measurement) -> dict:
    return {
        "device_id": m.device_id,
        "service_id": m.service_id,
        "timestamp_s": m.timestamp_s,
        "value": m.value,
        "code_version": m.code_version,
    }


def measurement_from_payload(payload: dict) -> Measurement:
    return Measurement(
        device_id=payload["device_id"],
        service_id=payload["service_id"],
        timestamp_ms=ms_from_s(payload["timestamp_s"]),
        value=float(payload["value"]),
        code_version=payload["code_version"],
    )


def command_to_payload(command: CommandPayload) -> dict:
    payload: dict = {"action": command.action, "command_id": command.command_id}
    if command.descriptor is not None:
        payload["descriptor"] = service_to_raw(command.descriptor)
    return payload


def command_from_payload(parsed: ParsedTopic, payload: dict) -> CommandPayload:
    descriptor = None
    if "descriptor" in payload:
        from .scenario import _Checker, parse_service

        c = _Checker()
        descriptor = parse_service(c, payload["descriptor"], "descriptor")
        if descriptor is None:
            raise WireError(f"invalid descriptor: {'; '.join(c.errors)}")
    return CommandPayload(
        action=payload["action"],
        command_id=payload["command_id"],
        service_id=parsed.service_id,
        descriptor=descriptor,
    )


# -- socket framing ----------------------------------------------------------


def send_message(sock, message: BusMessage) -> None:
    sock.sendall(encode(message))


def recv_message(sock) -> Optional[BusMessage]:
    """Read one framed message; None on clean EOF at a frame boundary."""
    header = _read_exact(sock, 4, at_boundary=True)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise WireError("frame length exceeds sanity cap")
    body = _read_exact(sock, length)
    return decode(header + (body or b""))


def _read_exact(sock, n: int, at_boundary: bool = False) -> Optional[bytes]:
    chunks = b""
    while len(chunks) < n:
        chunk = sock.recv(n - len(chunks))
        if not chunk:
            if at_boundary and not chunks:
                return None
            raise WireError("connection closed mid-frame")
        chunks += chunk
    return chunks
