"""Edge-device emulation: duty-cycled sampling, per-service lifecycle, fault
transforms, and the energy events each wake produces.

Every service owns an independent RNG stream keyed by (run seed, device seed,
service_id), so lifecycle actions or faults on one service can never perturb
a sibling's values. Commands arrive over the bus between wakes and are
processed at the next wake, before sampling.
"""
from __future__ import annotations

import hashlib
import math
import random
import struct
from dataclasses import dataclass
from typing import Iterable, Optional

from .energy import EnergyEvent, EnergyEventKind
from .model import (
    DeviceDescriptor,
    FaultKind,
    FaultSpec,
    LifecycleAction,
    LifecycleState,
    MAX_SEED,
    Measurement,
    SECONDS_PER_DAY,
    SensorModel,
    ServiceDescriptor,
    action_legal,
    apply_action,
    s_from_ms,
)
from .wire import CommandPayload


class DeviceError(ValueError):
    pass


def service_rng(run_seed: int, device_seed: int, service_id: str) -> random.Random:
    """Independent, reproducible stream per (run, device, service)."""
    key = struct.pack("<QQ", run_seed & MAX_SEED, device_seed & MAX_SEED)
    digest = hashlib.blake2b(service_id.encode("utf-8"), digest_size=8, key=key).digest()
    return random.Random(int.from_bytes(digest, "big"))


@dataclass(frozen=True)
class Reading:
    value: float
    suppressed: bool = False


def base_reading(sensor: SensorModel, t_s: float, rng: random.Random) -> float:
    """Diurnal sine around the baseline plus Gaussian noise.

    The Gaussian is drawn even when sigma is zero so a service consumes its
    RNG stream at exactly one draw per sample regardless of configuration.
    """
    diurnal = sensor.diurnal_amplitude * math.sin(2.0 * math.pi * t_s / SECONDS_PER_DAY)
    return sensor.baseline + diurnal + rng.gauss(0.0, sensor.noise_sigma)


def apply_fault(
    value: float,
    fault: FaultSpec,
    t_s: float,
    rng: random.Random,
    stuck_value: Optional[float] = None,
) -> Reading:
    if fault.kind is FaultKind.dropout:
        return Reading(value, suppressed=True)
    if fault.kind is FaultKind.stuck:
        return Reading(stuck_value if stuck_value is not None else value)
    if fault.kind is FaultKind.drift:
        return Reading(value + fault.magnitude * (t_s - fault.start_s) / 3600.0)
    probability = fault.outlier_probability if fault.outlier_probability is not None else 1.0
    if probability >= 1.0:
        return Reading(value + fault.magnitude)
    if probability > 0.0 and rng.random() < probability:
        return Reading(value + fault.magnitude)
    return Reading(value)


def generate_reading(
    sensor: SensorModel,
    t_s: float,
    fault: Optional[FaultSpec],
    rng: random.Random,
    stuck_value: Optional[float] = None,
) -> Reading:
    """One sensor reading at time t_s with an optional fault transform."""
    if t_s < 0:
        raise DeviceError("t_s must be non-negative")
    value = base_reading(sensor, t_s, rng)
    if fault is None or t_s < fault.start_s:
        return Reading(value)
    return apply_fault(value, fault, t_s, rng, stuck_value)


@dataclass
class TickResult:
    measurements: list[Measurement]
    energy_events: list[EnergyEvent]
    events: list[dict]


class DeviceRuntime:
    """One emulated device hosting independently managed services."""

    def __init__(self, descriptor: DeviceDescriptor, run_seed: int):
        self.descriptor = descriptor
        self.device_id = descriptor.device_id
        self._run_seed = run_seed
        self._svc: dict[str, ServiceDescriptor] = {}
        self._state: dict[str, LifecycleState] = {}
        self._max_version: dict[str, int] = {}
        self._rng: dict[str, random.Random] = {}
        self._faults: list[FaultSpec] = []
        self._stuck: dict[tuple[str, int], float] = {}
        self._last_value: dict[str, float] = {}
        self._queue: list[tuple[int, CommandPayload]] = []

    # -- lifecycle ---------------------------------------------------------

    def lifecycle(self, service_id: str) -> Optional[LifecycleState]:
        return self._state.get(service_id)

    def lifecycle_snapshot(self) -> dict[str, LifecycleState]:
        return dict(self._state)

    def code_version(self, service_id: str) -> Optional[int]:
        svc = self._svc.get(service_id)
        return svc.code_version if svc else None

    def service(self, service_id: str) -> ServiceDescriptor:
        try:
            return self._svc[service_id]
        except KeyError:
            raise DeviceError(f"unknown service {service_id!r}") from None

    def _lifecycle_event(self, service_id: str, action: LifecycleAction, now_ms: int) -> dict:
        svc = self._svc[service_id]
        return {
            "kind": "lifecycle",
            "action": action.value,
            "service_id": service_id,
            "state": self._state[service_id].value,
            "code_version": svc.code_version,
            "interval_s": svc.report_interval_s,
            "timestamp_s": s_from_ms(now_ms),
        }

    def install_service(self, descriptor: ServiceDescriptor, now_ms: int) -> dict:
        sid = descriptor.service_id
        state = self._state.get(sid)
        if not action_legal(state, LifecycleAction.install):
            raise DeviceError(f"service {sid!r} is already installed")
        if sid in self._max_version and descriptor.code_version <= self._max_version[sid]:
            raise DeviceError(
                f"reinstall of {sid!r} needs code_version > {self._max_version[sid]}"
            )
        self._svc[sid] = descriptor
        self._state[sid] = LifecycleState.Installed
        self._max_version[sid] = descriptor.code_version
        if sid not in self._rng:
            self._rng[sid] = service_rng(self._run_seed, self.descriptor.rng_seed, sid)
        return self._lifecycle_event(sid, LifecycleAction.install, now_ms)

    def _transition(self, service_id: str, action: LifecycleAction, now_ms: int) -> dict:
        state = self._state.get(service_id)
        if service_id not in self._svc:
            raise DeviceError(f"unknown service {service_id!r}")
        if not action_legal(state, action):
            raise DeviceError(
                f"cannot {action.value} service {service_id!r} in state {state.value}"
            )
        self._state[service_id] = apply_action(state, action)
        return self._lifecycle_event(service_id, action, now_ms)

    def start_service(self, service_id: str, now_ms: int) -> dict:
        return self._transition(service_id, LifecycleAction.start, now_ms)

    def stop_service(self, service_id: str, now_ms: int) -> dict:
        return self._transition(service_id, LifecycleAction.stop, now_ms)

    def uninstall_service(self, service_id: str, now_ms: int) -> dict:
        return self._transition(service_id, LifecycleAction.uninstall, now_ms)

    def update_service(self, service_id: str, new_descriptor: ServiceDescriptor, now_ms: int) -> dict:
        state = self._state.get(service_id)
        if service_id not in self._svc:
            raise DeviceError(f"unknown service {service_id!r}")
        if not action_legal(state, LifecycleAction.update):
            raise DeviceError(f"cannot update service {service_id!r} in state {state.value}")
        if new_descriptor.service_id != service_id:
            raise DeviceError("update must keep the service_id")
        current = self._svc[service_id]
        if new_descriptor.code_version <= current.code_version:
            raise DeviceError(
                f"code_version must increase (have {current.code_version}, "
                f"got {new_descriptor.code_version})"
            )
        self._svc[service_id] = new_descriptor
        self._max_version[service_id] = new_descriptor.code_version
        return self._lifecycle_event(service_id, LifecycleAction.update, now_ms)

    # -- faults ------------------------------------------------------------

    def inject_fault(self, fault: FaultSpec, now_ms: int) -> dict:
        if fault.service_id not in self._svc:
            raise DeviceError(f"unknown service {fault.service_id!r}")
        self._faults.append(fault)
        return {
            "kind": "fault_armed",
            "service_id": fault.service_id,
            "fault_kind": fault.kind.value,
            "start_s": fault.start_s,
            "timestamp_s": s_from_ms(now_ms),
        }

    def active_faults(self, service_id: str, t_ms: int) -> list[FaultSpec]:
        hits = [
            f for f in self._faults if f.service_id == service_id and f.start_ms <= t_ms
        ]
        hits.sort(key=lambda f: (f.start_ms, f.kind.value))
        return hits

    # -- scheduling and sampling --------------------------------------------

    def next_wake_after(self, t_ms: int) -> Optional[int]:
        """Next wake slot: the earliest upcoming interval multiple of any
        non-uninstalled service. Stopped services keep their slots so queued
        commands still get delivered."""
        best: Optional[int] = None
        for sid, state in self._state.items():
            if state is LifecycleState.Uninstalled:
                continue
            ivl = self._svc[sid].interval_ms
            nxt = (t_ms // ivl + 1) * ivl
            if best is None or nxt < best:
                best = nxt
        return best

    def queue_command(self, command: CommandPayload, enqueued_ms: int) -> None:
        self._queue.append((enqueued_ms, command))

    def _apply_command(self, command: CommandPayload, now_ms: int) -> dict:
        action = LifecycleAction(command.action)
        if action is LifecycleAction.install:
            return self.install_service(command.descriptor, now_ms)
        if action is LifecycleAction.update:
            return self.update_service(command.descriptor.service_id, command.descriptor, now_ms)
        if action is LifecycleAction.start:
            return self.start_service(command.service_id, now_ms)
        if action is LifecycleAction.stop:
            return self.stop_service(command.service_id, now_ms)
        return self.uninstall_service(command.service_id, now_ms)

    def _sample(self, sid: str, t_ms: int) -> Reading:
        svc = self._svc[sid]
        rng = self._rng[sid]
        value = base_reading(svc.sensor, s_from_ms(t_ms), rng)
        suppressed = False
        for fault in self.active_faults(sid, t_ms):
            stuck_key = (sid, fault.start_ms)
            if fault.kind is FaultKind.stuck and stuck_key not in self._stuck:
                self._stuck[stuck_key] = self._last_value.get(sid, value)
            reading = apply_fault(
                value, fault, s_from_ms(t_ms), rng, self._stuck.get(stuck_key)
            )
            value = reading.value
            suppressed = suppressed or reading.suppressed
        return Reading(value, suppressed)

    def tick(self, wake_ms: int) -> TickResult:
        """One wake: deliver queued commands, then sample every Running
        service whose interval divides the wake time, in service_id order."""
        profile = self.descriptor.energy_profile
        events: list[dict] = []
        nested: list[EnergyEvent] = []
        measurements: list[Measurement] = []

        due_commands = [(t, c) for t, c in self._queue if t < wake_ms]
        self._queue = [(t, c) for t, c in self._queue if t >= wake_ms]
        for _, command in due_commands:
            # receiving a command keeps the radio on for one tx-equivalent window
            nested.append(
                EnergyEvent(
                    self.device_id,
                    wake_ms,
                    EnergyEventKind.radio_tx,
                    profile.radio_tx_duration_ms,
                    profile.radio_tx_current_mA,
                    attributed_service=command.service_id,
                )
            )
            ack = {
                "kind": "ack",
                "command_id": command.command_id,
                "action": command.action,
                "service_id": command.service_id,
                "ok": True,
                "timestamp_s": s_from_ms(wake_ms),
            }
            try:
                result = self._apply_command(command, wake_ms)
                events.append(result)
                ack["state"] = result["state"]
                ack["code_version"] = result["code_version"]
                ack["interval_s"] = result["interval_s"]
            except DeviceError as exc:
                state = self._state.get(command.service_id)
                ack["ok"] = False
                ack["error"] = str(exc)
                ack["state"] = state.value if state else "absent"
            events.append(ack)

        due_services = sorted(
            sid
            for sid, state in self._state.items()
            if state is LifecycleState.Running and wake_ms % self._svc[sid].interval_ms == 0
        )
        for sid in due_services:
            svc = self._svc[sid]
            reading = self._sample(sid, wake_ms)
            nested.append(
                EnergyEvent(
                    self.device_id,
                    wake_ms,
                    EnergyEventKind.sensor_sample,
                    svc.energy_cost.sample_duration_ms,
                    svc.energy_cost.sample_current_mA,
                    attributed_service=sid,
                )
            )
            if reading.suppressed:
                continue
            nested.append(
                EnergyEvent(
                    self.device_id,
                    wake_ms,
                    EnergyEventKind.radio_tx,
                    profile.radio_tx_duration_ms,
                    profile.radio_tx_current_mA,
                    attributed_service=sid,
                )
            )
            measurements.append(
                Measurement(self.device_id, sid, wake_ms, reading.value, svc.code_version)
            )
            self._last_value[sid] = reading.value

        if not due_commands and not due_services and not self.wakes_at(wake_ms):
            return TickResult(measurements, [], events)

        wake_duration = max(profile.wake_duration_ms, sum(e.duration_ms for e in nested))
        wake = EnergyEvent(
            self.device_id,
            wake_ms,
            EnergyEventKind.wake_window,
            wake_duration,
            profile.mcu_active_current_mA,
        )
        return TickResult(measurements, [wake, *nested], events)

    def wakes_at(self, wake_ms: int) -> bool:
        """A wake slot exists at this instant (any non-uninstalled service's
        interval divides it). The first slot is one full interval after start;
        t=0 is never a wake."""
        return wake_ms > 0 and any(
            state is not LifecycleState.Uninstalled
            and wake_ms % self._svc[sid].interval_ms == 0
            for sid, state in self._state.items()
        )
