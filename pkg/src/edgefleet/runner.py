"""Discrete-event simulation loop tying devices, bus, control plane, and
energy traces together.

The loop advances through the sorted set of upcoming instants: device wake
slots, energy-window closes, scripted action times, and the run end. At each
instant it first dispatches due actions (so they land on devices at the next
wake), then ticks every waking device, then closes any energy windows ending
there. With pacing enabled the loop sleeps so one simulated second costs
1/speedup wall seconds; pacing never changes simulated behavior.
"""
from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .bus import Bus
from .control import AuditEntry, ControlPlane, OrchestrationError
from .device import DeviceRuntime, service_rng
from .energy import EnergyTrace
from .model import (
    LifecycleAction,
    Measurement,
    Policy,
    ScenarioConfig,
    ServiceDescriptor,
    ms_from_s,
    s_from_ms,
)
from .wire import (
    BusMessage,
    CommandPayload,
    ParsedTopic,
    command_to_payload,
    make_topic,
    measurement_from_payload,
    measurement_to_payload,
)


@dataclass(frozen=True)
class ScriptedAction:
    at_s: float
    device_id: str
    service_id: str
    action: LifecycleAction
    descriptor: Optional[ServiceDescriptor] = None

    @property
    def at_ms(self) -> int:
        return ms_from_s(self.at_s)


@dataclass
class RunResult:
    scenario: ScenarioConfig
    seed: int
    policy: Policy
    speedup: float
    measurements: list[Measurement]
    traces: dict[str, EnergyTrace]
    events: list[dict]
    state_changes: list[dict]
    audit: list[AuditEntry]
    control: ControlPlane
    devices: dict[str, DeviceRuntime]
    wall_seconds: float

    def service_trace(self, device_id: str, service_id: str) -> list[tuple[int, float]]:
        return [
            (m.timestamp_ms, m.value)
            for m in self.measurements
            if m.device_id == device_id and m.service_id == service_id
        ]


class SimulationRun:
    def __init__(
        self,
        scenario: ScenarioConfig,
        seed: int,
        *,
        policy: Optional[Policy] = None,
        paced: bool = False,
        speedup: Optional[float] = None,
        lossy_drop_probability: float = 0.0,
        uninstall_after_stop: bool = False,
        scripted_actions: Sequence[ScriptedAction] = (),
        sink: Optional[Callable[[dict], None]] = None,
        baseline_windows: Optional[dict[str, list[dict]]] = None,
    ):
        self.scenario = scenario
        self.seed = seed
        self.policy = policy if policy is not None else scenario.policy
        self.speedup = speedup if speedup is not None else scenario.speedup
        self.paced = paced
        self.duration_ms = scenario.duration_ms
        self.uninstall_after_stop = uninstall_after_stop
        self.lossy_drop_probability = lossy_drop_probability
        self._sink = sink
        self._baseline_windows = baseline_windows or {}

        self.lock = threading.RLock()
        self.now_ms = 0
        self.run_complete = False
        self.events: list[dict] = []
        self.measurements: list[Measurement] = []

        self.bus = Bus(
            drop_probability=lossy_drop_probability,
            drop_rng=service_rng(seed, seed, "__transport__"),
        )
        self.devices: dict[str, DeviceRuntime] = {
            d.device_id: DeviceRuntime(d, seed) for d in scenario.devices
        }
        self.traces: dict[str, EnergyTrace] = {}
        self._windows_emitted: dict[str, int] = {}
        for d in scenario.devices:
            intervals = [s.interval_ms for s in d.services]
            window_ms = math.gcd(*intervals) if intervals else self.duration_ms
            self.traces[d.device_id] = EnergyTrace(
                d.device_id, d.energy_profile, window_ms, self.duration_ms
            )
            self._windows_emitted[d.device_id] = 0

        self.control = ControlPlane(
            device_ids=[d.device_id for d in scenario.devices],
            policy=self.policy,
            params=scenario.detector_params,
            dispatch=self._dispatch_command,
            emit=self._emit,
        )

        self._scripted = sorted(scripted_actions, key=lambda a: a.at_ms)
        self._scripted_idx = 0
        self._external: list[tuple[str, str, str, LifecycleAction, Optional[ServiceDescriptor]]] = []

        self.bus.subscribe(lambda p: p.channel in ("measurement", "event", "energy"), self._on_telemetry)
        for device_id, runtime in self.devices.items():
            self.bus.subscribe(
                lambda p, dev=device_id: p.channel == "cmd" and p.device_id == dev,
                lambda msg, p, rt=runtime: rt.queue_command(
                    _command_of(msg, p), ms_from_s(msg.publish_time_s)
                ),
            )

    # -- event plumbing -------------------------------------------------------

    def _emit(self, event: dict) -> None:
        self.events.append(event)
        if self._sink is not None:
            self._sink(event)

    def _dispatch_command(self, device_id: str, service_id: str, command: CommandPayload) -> None:
        self._emit(
            {
                "type": "command",
                "device_id": device_id,
                "service_id": service_id,
                "action": command.action,
                "command_id": command.command_id,
                "t_s": s_from_ms(self.now_ms),
            }
        )
        self.bus.publish(
            make_topic(device_id, "cmd", service_id),
            command_to_payload(command),
            s_from_ms(self.now_ms),
        )

    def _on_telemetry(self, msg: BusMessage, parsed: ParsedTopic) -> None:
        if parsed.channel == "measurement":
            measurement = measurement_from_payload(msg.payload)
            self.measurements.append(measurement)
            self.control.ingest(measurement)
            self._emit({"type": "measurement", **msg.payload})
        elif parsed.channel == "event":
            payload = msg.payload
            kind = payload["kind"]
            if kind == "lifecycle":
                self.control.on_lifecycle(parsed.device_id, payload)
                self._emit({"type": "lifecycle", "device_id": parsed.device_id, **payload})
            elif kind == "ack":
                self.control.on_ack(parsed.device_id, payload)
                self._emit({"type": "ack", "device_id": parsed.device_id, **payload})
                if (
                    self.uninstall_after_stop
                    and payload["ok"]
                    and payload["action"] == LifecycleAction.stop.value
                ):
                    self.control.orchestrate(
                        parsed.device_id,
                        payload["service_id"],
                        LifecycleAction.uninstall,
                        now_s=payload["timestamp_s"],
                    )
            else:
                self._emit({"type": "fault_armed", "device_id": parsed.device_id, **payload})
        else:
            self._emit({"type": "energy_window", **msg.payload})

    # -- external orchestration (serve mode) -----------------------------------

    def submit_action(
        self,
        device_id: str,
        service_id: str,
        action: LifecycleAction,
        descriptor: Optional[ServiceDescriptor] = None,
    ) -> str:
        """Validate now, dispatch at the next simulated instant."""
        with self.lock:
            if self.run_complete:
                raise OrchestrationError("illegal_action", "run already complete")
            self.control.precheck(device_id, service_id, action, descriptor)
            command_id = self.control.allocate_command_id()
            self._external.append((command_id, device_id, service_id, action, descriptor))
            return command_id

    def snapshot_result(self) -> RunResult:
        """Point-in-time view with the same shape as the final result. Callers
        must hold self.lock."""
        return RunResult(
            scenario=self.scenario,
            seed=self.seed,
            policy=self.policy,
            speedup=self.speedup,
            measurements=list(self.measurements),
            traces=self.traces,
            events=list(self.events),
            state_changes=list(self.control.state_changes),
            audit=list(self.control.audit),
            control=self.control,
            devices=self.devices,
            wall_seconds=0.0,
        )

    # -- the loop ---------------------------------------------------------------

    def _provision(self) -> None:
        self._emit(self._run_header())
        for device_id in sorted(self.devices):
            runtime = self.devices[device_id]
            for svc in runtime.descriptor.services:
                topic = make_topic(device_id, "event", svc.service_id)
                self.bus.publish(topic, runtime.install_service(svc, 0), 0.0)
                self.bus.publish(topic, runtime.start_service(svc.service_id, 0), 0.0)
        for fault in self.scenario.faults:
            runtime = self.devices[fault.device_id]
            event = runtime.inject_fault(fault, 0)
            self.bus.publish(make_topic(fault.device_id, "event", fault.service_id), event, 0.0)

    def _run_header(self) -> dict:
        devices = {}
        for d in sorted(self.scenario.devices, key=lambda d: d.device_id):
            services = {}
            for svc in d.services:
                p = self.scenario.detector_params.resolve(d.device_id, svc.service_id)
                services[svc.service_id] = {
                    "interval_s": svc.report_interval_s,
                    "code_version": svc.code_version,
                    "params": {
                        "availability_grace": p.availability_grace,
                        "missed_reports_k": p.missed_reports_k,
                        "zscore_threshold": p.zscore_threshold,
                        "zscore_window": p.zscore_window,
                        "ph_delta": p.ph_delta,
                        "ph_lambda": p.ph_lambda,
                        "anomaly_votes_m": p.anomaly_votes_m,
                        "recovery_window_r": p.recovery_window_r,
                    },
                }
            devices[d.device_id] = {"services": services}
        return {
            "type": "run_header",
            "seed": self.seed,
            "policy": self.policy.value,
            "speedup": self.speedup,
            "duration_s": self.scenario.duration_s,
            "lossy_drop_probability": self.lossy_drop_probability,
            "devices": devices,
        }

    def _next_instant(self) -> Optional[int]:
        candidates: list[int] = []
        for runtime in self.devices.values():
            nxt = runtime.next_wake_after(self.now_ms)
            if nxt is not None and nxt <= self.duration_ms:
                candidates.append(nxt)
        for device_id, trace in self.traces.items():
            idx = self._windows_emitted[device_id]
            if idx < trace.window_count:
                candidates.append(trace.window_bounds(idx)[1])
        if self._scripted_idx < len(self._scripted):
            candidates.append(self._scripted[self._scripted_idx].at_ms)
        if not candidates:
            return None
        return min(candidates)

    def _drain_actions(self, now_ms: int) -> None:
        external, self._external = self._external, []
        for command_id, device_id, service_id, action, descriptor in external:
            self.control.orchestrate(
                device_id,
                service_id,
                action,
                descriptor,
                now_s=s_from_ms(now_ms),
                command_id=command_id,
                prechecked=True,
            )
        while (
            self._scripted_idx < len(self._scripted)
            and self._scripted[self._scripted_idx].at_ms <= now_ms
        ):
            act = self._scripted[self._scripted_idx]
            self._scripted_idx += 1
            self.control.orchestrate(
                act.device_id,
                act.service_id,
                act.action,
                act.descriptor,
                now_s=s_from_ms(now_ms),
            )

    def _tick_device(self, device_id: str, now_ms: int) -> None:
        runtime = self.devices[device_id]
        result = runtime.tick(now_ms)
        trace = self.traces[device_id]
        for ev in result.energy_events:
            trace.add(ev)
        for event in result.events:
            self.bus.publish(
                make_topic(device_id, "event", event["service_id"]),
                event,
                s_from_ms(now_ms),
            )
        for m in result.measurements:
            self.bus.publish(
                make_topic(device_id, "measurement", m.service_id),
                measurement_to_payload(m),
                s_from_ms(now_ms),
            )
        self._emit({"type": "eval", "device_id": device_id, "t_s": s_from_ms(now_ms)})
        self.control.evaluate(device_id, now_ms)

    def _close_windows(self, now_ms: int) -> None:
        for device_id in sorted(self.traces):
            trace = self.traces[device_id]
            while self._windows_emitted[device_id] < trace.window_count:
                idx = self._windows_emitted[device_id]
                start, end = trace.window_bounds(idx)
                if end != now_ms:
                    break
                charge = trace.window_charge(idx)
                self._windows_emitted[device_id] = idx + 1
                self.bus.publish(
                    make_topic(device_id, "energy"),
                    {
                        "device_id": device_id,
                        "window_start_s": s_from_ms(start),
                        "window_end_s": s_from_ms(end),
                        "variant": "live",
                        "avg_current_mA": float(charge.avg_current_mA()),
                    },
                    s_from_ms(now_ms),
                )
                baseline = self._baseline_windows.get(device_id)
                if baseline is not None and idx < len(baseline):
                    self._emit({"type": "energy_window", **baseline[idx]})

    def run(self) -> RunResult:
        start_wall = time.monotonic()
        with self.lock:
            self._provision()
        while True:
            with self.lock:
                t = self._next_instant()
            if t is None or t > self.duration_ms:
                break
            if self.paced:
                target = start_wall + s_from_ms(t) / self.speedup
                delay = target - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            with self.lock:
                self.now_ms = t
                self._drain_actions(t)
                for device_id in sorted(self.devices):
                    if self.devices[device_id].wakes_at(t):
                        self._tick_device(device_id, t)
                self._close_windows(t)
        with self.lock:
            self.now_ms = self.duration_ms
            self.control.finish(self.duration_ms)
            self._emit({"type": "run_end", "t_s": s_from_ms(self.duration_ms)})
            self.run_complete = True
            return RunResult(
                scenario=self.scenario,
                seed=self.seed,
                policy=self.policy,
                speedup=self.speedup,
                measurements=list(self.measurements),
                traces=self.traces,
                events=list(self.events),
                state_changes=list(self.control.state_changes),
                audit=list(self.control.audit),
                control=self.control,
                devices=self.devices,
                wall_seconds=time.monotonic() - start_wall,
            )


def _command_of(msg: BusMessage, parsed: ParsedTopic) -> CommandPayload:
    from .wire import command_from_payload

    return command_from_payload(parsed, msg.payload)


def run_scenario(scenario: ScenarioConfig, seed: int, **options) -> RunResult:
    return SimulationRun(scenario, seed, **options).run()
