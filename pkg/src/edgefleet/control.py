"""Control plane: telemetry ingestion and cleaning, availability/correctness
evaluation, per-service health tracking, and lifecycle orchestration with an
audit log.

Evaluation runs once per device wake. A service is only evaluated while the
control plane believes it is Running; lifecycle and health are orthogonal.
"""
from __future__ import annotations

import math
import statistics
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .health import health_transition
from .model import (
    DetectorParams,
    Health,
    HealthState,
    HealthVerdict,
    LifecycleAction,
    LifecycleState,
    Measurement,
    Policy,
    ServiceDescriptor,
    VerdictReason,
    action_legal,
    ms_from_s,
    s_from_ms,
)
from .wire import CommandPayload


class OrchestrationError(ValueError):
    """Rejected before dispatch. reason is one of unknown_target,
    illegal_action, invalid_request."""

    def __init__(self, reason: str, message: str):
        self.reason = reason
        super().__init__(message)


def detect_outlier(window: Sequence[float], candidate: float, params: DetectorParams) -> bool:
    """Robust z-score of the candidate against the rolling window.

    Returns False during warm-up (window shorter than 5). A degenerate MAD is
    floored at 1e-9 * max(1, |median|) so constant windows cannot divide by
    zero yet any real deviation still registers.
    """
    if len(window) < 5:
        return False
    med = statistics.median(window)
    mad = statistics.median([abs(x - med) for x in window])
    eps = 1e-9 * max(1.0, abs(med))
    if mad < eps:
        mad = eps
    z = 0.6745 * abs(candidate - med) / mad
    return z > params.zscore_threshold


class ServiceHealthRecord:
    """Per-service control-plane state: rolling values, anomaly votes,
    Page-Hinkley accumulators, health, and the lifecycle view."""

    def __init__(
        self,
        device_id: str,
        service_id: str,
        params: DetectorParams,
        interval_s: float,
        code_version: int,
        lifecycle: LifecycleState,
        now_ms: int,
    ):
        self.device_id = device_id
        self.service_id = service_id
        self.params = params
        self.interval_ms = ms_from_s(interval_s)
        self.code_version = code_version
        self.lifecycle = lifecycle
        self.started_at_ms = now_ms
        self.last_seen_ms: Optional[int] = None
        self.last_value: Optional[float] = None
        self.window: deque[float] = deque(maxlen=params.zscore_window)
        self.flags: deque[bool] = deque(maxlen=params.zscore_window)
        self.recent: deque[tuple[float, float]] = deque(maxlen=200)
        self.ph_count = 0
        self.ph_mean = 0.0
        self.ph_m = 0.0
        self.ph_M = 0.0
        self.drift_latched = False
        self.stale_streak = 0
        self.health = HealthState(Health.Normal, now_ms, VerdictReason.ok)
        self.history: deque[HealthVerdict] = deque(maxlen=max(64, params.recovery_window_r))
        self.total_verdicts = 0
        self.suspicious_verdicts = 0
        self.unavailable_verdicts = 0

    def reset_ph(self) -> None:
        self.ph_count = 0
        self.ph_mean = 0.0
        self.ph_m = 0.0
        self.ph_M = 0.0
        self.drift_latched = False

    def restart(self, now_ms: int) -> None:
        self.started_at_ms = now_ms
        self.stale_streak = 0
        self.flags.clear()
        self.reset_ph()


def detect_drift(record: ServiceHealthRecord, value: float, params: DetectorParams) -> bool:
    """Page-Hinkley step: update the running mean, accumulate deviations, and
    latch a detection until the next evaluation consumes it."""
    record.ph_count += 1
    record.ph_mean += (value - record.ph_mean) / record.ph_count
    record.ph_m += value - record.ph_mean - params.ph_delta
    record.ph_M = min(record.ph_M, record.ph_m)
    fired = (record.ph_m - record.ph_M) > params.ph_lambda
    if fired:
        record.drift_latched = True
    return fired


def check_availability(record: ServiceHealthRecord, now_ms: int) -> bool:
    """Instantaneous freshness: a report arrived within grace * interval,
    counting from service start while no report has arrived yet."""
    anchor = record.started_at_ms
    if record.last_seen_ms is not None and record.last_seen_ms > anchor:
        anchor = record.last_seen_ms
    return (now_ms - anchor) <= record.params.availability_grace * record.interval_ms


@dataclass
class AuditEntry:
    command_id: str
    device_id: str
    service_id: str
    action: str
    dispatched_at_s: float
    status: str = "pending"  # pending | acked | failed | timeout
    completed_at_s: Optional[float] = None
    resulting_state: Optional[str] = None
    error: Optional[str] = None

    def as_dict(self) -> dict:
        return {
            "command_id": self.command_id,
            "device_id": self.device_id,
            "service_id": self.service_id,
            "action": self.action,
            "dispatched_at_s": self.dispatched_at_s,
            "status": self.status,
            "completed_at_s": self.completed_at_s,
            "resulting_state": self.resulting_state,
            "error": self.error,
        }


class ControlPlane:
    """Holds every ServiceHealthRecord, applies the policy, and issues
    commands through a dispatch callback supplied by the runner."""

    def __init__(
        self,
        device_ids: Sequence[str],
        policy: Policy,
        params: DetectorParams,
        dispatch: Optional[Callable[[str, str, CommandPayload], None]] = None,
        emit: Optional[Callable[[dict], None]] = None,
    ):
        self.device_ids = set(device_ids)
        self.policy = policy
        self.params = params
        self._dispatch = dispatch
        self._emit = emit or (lambda event: None)
        self.records: dict[tuple[str, str], ServiceHealthRecord] = {}
        self.audit: list[AuditEntry] = []
        self._audit_by_id: dict[str, AuditEntry] = {}
        self.state_changes: list[dict] = []
        self._issued_auto_stop: set[tuple[str, str]] = set()
        self._command_counter = 0
        self._counter_lock = threading.Lock()

    # -- registry ------------------------------------------------------------

    def record(self, device_id: str, service_id: str) -> Optional[ServiceHealthRecord]:
        return self.records.get((device_id, service_id))

    def on_lifecycle(self, device_id: str, payload: dict) -> None:
        service_id = payload["service_id"]
        action = LifecycleAction(payload["action"])
        now_ms = ms_from_s(payload["timestamp_s"])
        rec = self.records.get((device_id, service_id))
        if rec is None:
            rec = ServiceHealthRecord(
                device_id,
                service_id,
                self.params.resolve(device_id, service_id),
                payload["interval_s"],
                payload["code_version"],
                LifecycleState(payload["state"]),
                now_ms,
            )
            self.records[(device_id, service_id)] = rec
            return
        rec.lifecycle = LifecycleState(payload["state"])
        rec.code_version = payload["code_version"]
        rec.interval_ms = ms_from_s(payload["interval_s"])
        if action is LifecycleAction.start:
            rec.restart(now_ms)
        elif action is LifecycleAction.update:
            rec.reset_ph()
        elif action is LifecycleAction.install:
            rec.restart(now_ms)

    def on_ack(self, device_id: str, payload: dict) -> None:
        entry = self._audit_by_id.get(payload["command_id"])
        if entry is None or entry.status != "pending":
            return
        entry.status = "acked" if payload["ok"] else "failed"
        entry.completed_at_s = payload["timestamp_s"]
        entry.resulting_state = payload.get("state")
        entry.error = payload.get("error")

    # -- data monitoring -------------------------------------------------------

    def ingest(self, m: Measurement) -> str:
        """Clean one measurement into its record. Returns the disposition:
        accepted, dropped (out of order or duplicate), rejected_non_finite,
        or unknown_service."""
        rec = self.records.get((m.device_id, m.service_id))
        if rec is None:
            return "unknown_service"
        if rec.last_seen_ms is not None and m.timestamp_ms <= rec.last_seen_ms:
            return "dropped"
        if not math.isfinite(m.value):
            rec.last_seen_ms = m.timestamp_ms
            rec.flags.append(True)
            return "rejected_non_finite"
        flag = detect_outlier(list(rec.window), m.value, rec.params)
        detect_drift(rec, m.value, rec.params)
        rec.window.append(m.value)
        rec.flags.append(flag)
        rec.last_seen_ms = m.timestamp_ms
        rec.last_value = m.value
        rec.code_version = m.code_version
        rec.recent.append((m.timestamp_s, m.value))
        return "accepted"

    # -- anomaly detection / evaluation ---------------------------------------

    def evaluate_service(self, rec: ServiceHealthRecord, now_ms: int) -> Optional[HealthVerdict]:
        if rec.lifecycle is not LifecycleState.Running:
            return None
        params = rec.params
        if check_availability(rec, now_ms):
            rec.stale_streak = 0
        else:
            rec.stale_streak += 1
        available = rec.stale_streak < params.missed_reports_k
        if not available:
            verdict = HealthVerdict(False, True, now_ms, VerdictReason.missed_reports)
        else:
            votes = sum(rec.flags)
            voted = votes >= params.anomaly_votes_m
            drifted = rec.drift_latched
            correct = not (voted or drifted)
            reason = (
                VerdictReason.ok
                if correct
                else (VerdictReason.outlier if voted else VerdictReason.drift)
            )
            verdict = HealthVerdict(True, correct, now_ms, reason)
        rec.drift_latched = False
        rec.total_verdicts += 1
        if not verdict.available:
            rec.unavailable_verdicts += 1
        previous = list(rec.history)
        rec.history.append(verdict)
        new_health = health_transition(
            rec.health, verdict, previous, params.recovery_window_r
        )
        flipped = new_health.state is not rec.health.state
        rec.health = new_health
        if new_health.state is Health.Suspicious:
            rec.suspicious_verdicts += 1
        if flipped:
            change = {
                "type": "state_change",
                "device_id": rec.device_id,
                "service_id": rec.service_id,
                "state": new_health.state.value,
                "since_s": new_health.since_s,
                "reason": new_health.last_reason.value,
                "t_s": s_from_ms(now_ms),
            }
            self.state_changes.append(change)
            self._emit(change)
            if new_health.state is Health.Suspicious:
                self._auto_policy(rec, now_ms)
        return verdict

    def evaluate(self, device_id: str, now_ms: int) -> list[HealthVerdict]:
        verdicts = []
        for (dev, _sid), rec in sorted(self.records.items()):
            if dev != device_id:
                continue
            verdict = self.evaluate_service(rec, now_ms)
            if verdict is not None:
                verdicts.append(verdict)
        return verdicts

    def _auto_policy(self, rec: ServiceHealthRecord, now_ms: int) -> None:
        key = (rec.device_id, rec.service_id)
        if self.policy is Policy.auto_stop_on_suspicious:
            if key in self._issued_auto_stop or rec.lifecycle is not LifecycleState.Running:
                return
            self._issued_auto_stop.add(key)
            self.orchestrate(
                rec.device_id, rec.service_id, LifecycleAction.stop, now_s=s_from_ms(now_ms)
            )
        else:
            self._emit(
                {
                    "type": "recommendation",
                    "device_id": rec.device_id,
                    "service_id": rec.service_id,
                    "action": LifecycleAction.stop.value,
                    "reason": rec.health.last_reason.value,
                    "t_s": s_from_ms(now_ms),
                }
            )

    # -- orchestration ---------------------------------------------------------

    def allocate_command_id(self) -> str:
        with self._counter_lock:
            self._command_counter += 1
            return f"c{self._command_counter}"

    def precheck(
        self,
        device_id: str,
        service_id: str,
        action: LifecycleAction,
        descriptor: Optional[ServiceDescriptor] = None,
    ) -> None:
        if device_id not in self.device_ids:
            raise OrchestrationError("unknown_target", f"unknown device {device_id!r}")
        rec = self.records.get((device_id, service_id))
        if action in (LifecycleAction.install, LifecycleAction.update):
            if descriptor is None:
                raise OrchestrationError("invalid_request", f"{action.value} needs a descriptor")
            if descriptor.service_id != service_id:
                raise OrchestrationError(
                    "invalid_request", "descriptor service_id must match the target"
                )
        elif descriptor is not None:
            raise OrchestrationError("invalid_request", f"{action.value} takes no descriptor")
        if rec is None:
            if action is LifecycleAction.install:
                return
            raise OrchestrationError(
                "unknown_target", f"unknown service {device_id}/{service_id}"
            )
        state = rec.lifecycle
        if not action_legal(None if state is None else state, action):
            raise OrchestrationError(
                "illegal_action", f"cannot {action.value} from {state.value}"
            )
        if action is LifecycleAction.update and descriptor.code_version <= rec.code_version:
            raise OrchestrationError(
                "illegal_action",
                f"code_version must exceed {rec.code_version}",
            )
        if action is LifecycleAction.install and descriptor.code_version <= rec.code_version:
            raise OrchestrationError(
                "illegal_action",
                f"reinstall needs code_version above {rec.code_version}",
            )

    def orchestrate(
        self,
        device_id: str,
        service_id: str,
        action: LifecycleAction,
        descriptor: Optional[ServiceDescriptor] = None,
        now_s: float = 0.0,
        command_id: Optional[str] = None,
        prechecked: bool = False,
    ) -> str:
        if not prechecked:
            self.precheck(device_id, service_id, action, descriptor)
        if self._dispatch is None:
            raise OrchestrationError("invalid_request", "control plane has no dispatcher")
        if command_id is None:
            command_id = self.allocate_command_id()
        command = CommandPayload(
            action=action.value,
            command_id=command_id,
            service_id=service_id,
            descriptor=descriptor,
        )
        entry = AuditEntry(command_id, device_id, service_id, action.value, now_s)
        self.audit.append(entry)
        self._audit_by_id[command_id] = entry
        self._dispatch(device_id, service_id, command)
        return command_id

    def finish(self, now_ms: int) -> None:
        for entry in self.audit:
            if entry.status == "pending":
                entry.status = "timeout"
                entry.completed_at_s = s_from_ms(now_ms)

    # -- views -----------------------------------------------------------------

    def snapshot(self) -> list[dict]:
        devices: dict[str, list[dict]] = {d: [] for d in sorted(self.device_ids)}
        for (dev, sid), rec in sorted(self.records.items()):
            health = None
            if rec.lifecycle is LifecycleState.Running:
                health = {
                    "state": rec.health.state.value,
                    "since_s": rec.health.since_s,
                    "last_reason": rec.health.last_reason.value,
                }
            devices[dev].append(
                {
                    "service_id": sid,
                    "lifecycle": rec.lifecycle.value,
                    "code_version": rec.code_version,
                    "health": health,
                    "last_value": rec.last_value,
                    "last_seen_s": s_from_ms(rec.last_seen_ms)
                    if rec.last_seen_ms is not None
                    else None,
                }
            )
        return [{"device_id": dev, "services": svcs} for dev, svcs in devices.items()]

    def service_detail(self, device_id: str, service_id: str) -> Optional[dict]:
        rec = self.records.get((device_id, service_id))
        if rec is None:
            return None
        return {
            "device_id": device_id,
            "service_id": service_id,
            "lifecycle": rec.lifecycle.value,
            "code_version": rec.code_version,
            "health": {
                "state": rec.health.state.value,
                "since_s": rec.health.since_s,
                "last_reason": rec.health.last_reason.value,
            },
            "verdicts": [
                {
                    "available": v.available,
                    "correct": v.correct,
                    "evaluated_at_s": v.evaluated_at_s,
                    "reason": v.reason.value,
                }
                for v in list(rec.history)[-50:]
            ],
            "recent_measurements": [
                {"timestamp_s": t, "value": v} for t, v in list(rec.recent)[-100:]
            ],
            "detector_params": {
                "availability_grace": rec.params.availability_grace,
                "missed_reports_k": rec.params.missed_reports_k,
                "zscore_threshold": rec.params.zscore_threshold,
                "zscore_window": rec.params.zscore_window,
                "ph_delta": rec.params.ph_delta,
                "ph_lambda": rec.params.ph_lambda,
                "anomaly_votes_m": rec.params.anomaly_votes_m,
                "recovery_window_r": rec.params.recovery_window_r,
            },
        }
