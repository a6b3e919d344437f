"""Core domain types shared by the device emulator, control plane, and reports.

Simulated time is kept as integer milliseconds internally so that schedules,
energy windows, and traces are bit-reproducible; every external surface
(wire payloads, CSV, JSON, API) speaks seconds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Mapping, Optional

MS_PER_S = 1000
SECONDS_PER_DAY = 86400.0
MAX_SEED = 2**64 - 1


class SensorKind(str, Enum):
    temperature = "temperature"
    humidity = "humidity"
    co2 = "co2"
    generic = "generic"


class LifecycleState(str, Enum):
    Installed = "Installed"
    Running = "Running"
    Stopped = "Stopped"
    Uninstalled = "Uninstalled"


class LifecycleAction(str, Enum):
    install = "install"
    start = "start"
    stop = "stop"
    uninstall = "uninstall"
    update = "update"


class Health(str, Enum):
    Normal = "Normal"
    Suspicious = "Suspicious"


class VerdictReason(str, Enum):
    ok = "ok"
    missed_reports = "missed_reports"
    outlier = "outlier"
    drift = "drift"


class FaultKind(str, Enum):
    dropout = "dropout"
    stuck = "stuck"
    offset_outlier = "offset_outlier"
    drift = "drift"


class Policy(str, Enum):
    manual = "manual"
    auto_stop_on_suspicious = "auto_stop_on_suspicious"


# States each action may be issued from. install is special-cased: it is legal
# when the service is absent or was previously uninstalled.
_LEGAL_FROM: dict[LifecycleAction, frozenset[LifecycleState]] = {
    LifecycleAction.start: frozenset({LifecycleState.Installed, LifecycleState.Stopped}),
    LifecycleAction.stop: frozenset({LifecycleState.Running}),
    LifecycleAction.uninstall: frozenset({LifecycleState.Installed, LifecycleState.Stopped}),
    LifecycleAction.update: frozenset(
        {LifecycleState.Installed, LifecycleState.Running, LifecycleState.Stopped}
    ),
}


def action_legal(state: Optional[LifecycleState], action: LifecycleAction) -> bool:
    """Whether *action* may be issued against a service currently in *state*.

    ``state is None`` means the service does not exist on the device yet.
    Uninstalled is terminal for everything except a fresh install.
    """
    if action is LifecycleAction.install:
        return state is None or state is LifecycleState.Uninstalled
    if state is None:
        return False
    return state in _LEGAL_FROM[action]


def apply_action(state: Optional[LifecycleState], action: LifecycleAction) -> LifecycleState:
    """Resulting lifecycle state after a legal *action*. Raises on illegal ones."""
    if not action_legal(state, action):
        raise ValueError(f"illegal lifecycle action {action.value} from {state.value if state else 'absent'}")
    if action is LifecycleAction.install:
        return LifecycleState.Installed
    if action is LifecycleAction.start:
        return LifecycleState.Running
    if action is LifecycleAction.stop:
        return LifecycleState.Stopped
    if action is LifecycleAction.uninstall:
        return LifecycleState.Uninstalled
    return state  # update preserves the state


def ms_from_s(seconds: float) -> int:
    """Exact millisecond conversion; rejects values that do not sit on the grid."""
    value = float(seconds)
    if not math.isfinite(value):
        raise ValueError("time value must be finite")
    ms = round(value * MS_PER_S)
    if abs(value * MS_PER_S - ms) > 1e-6:
        raise ValueError(f"{seconds!r} is not representable in whole milliseconds")
    return int(ms)


def s_from_ms(ms: int) -> float:
    return ms / MS_PER_S


@dataclass(frozen=True)
class SensorModel:
    kind: SensorKind
    baseline: float
    diurnal_amplitude: float
    noise_sigma: float
    unit: str


@dataclass(frozen=True)
class ServiceEnergyCost:
    sample_current_mA: float
    sample_duration_s: float

    @property
    def sample_duration_ms(self) -> int:
        return ms_from_s(self.sample_duration_s)


@dataclass(frozen=True)
class ServiceDescriptor:
    service_id: str
    sensor: SensorModel
    report_interval_s: float
    code_version: int
    energy_cost: ServiceEnergyCost

    @property
    def interval_ms(self) -> int:
        return ms_from_s(self.report_interval_s)


@dataclass(frozen=True)
class EnergyProfile:
    sleep_current_mA: float
    mcu_active_current_mA: float
    wake_duration_s: float
    radio_tx_current_mA: float
    radio_tx_duration_s: float

    @property
    def wake_duration_ms(self) -> int:
        return ms_from_s(self.wake_duration_s)

    @property
    def radio_tx_duration_ms(self) -> int:
        return ms_from_s(self.radio_tx_duration_s)


@dataclass(frozen=True)
class DeviceDescriptor:
    device_id: str
    services: tuple[ServiceDescriptor, ...]
    energy_profile: EnergyProfile
    rng_seed: int


@dataclass(frozen=True)
class Measurement:
    device_id: str
    service_id: str
    timestamp_ms: int
    value: float
    code_version: int

    @property
    def timestamp_s(self) -> float:
        return s_from_ms(self.timestamp_ms)


@dataclass(frozen=True)
class HealthVerdict:
    available: bool
    correct: bool
    evaluated_at_ms: int
    reason: VerdictReason

    @property
    def evaluated_at_s(self) -> float:
        return s_from_ms(self.evaluated_at_ms)

    @property
    def clean(self) -> bool:
        return self.available and self.correct


@dataclass(frozen=True)
class HealthState:
    state: Health
    since_ms: int
    last_reason: VerdictReason

    @property
    def since_s(self) -> float:
        return s_from_ms(self.since_ms)


@dataclass(frozen=True)
class FaultSpec:
    device_id: str
    service_id: str
    start_s: float
    kind: FaultKind
    magnitude: float
    outlier_probability: Optional[float] = None

    @property
    def start_ms(self) -> int:
        return ms_from_s(self.start_s)


@dataclass(frozen=True)
class DetectorParams:
    availability_grace: float = 1.5
    missed_reports_k: int = 2
    zscore_threshold: float = 3.5
    zscore_window: int = 30
    ph_delta: float = 0.05
    ph_lambda: float = 5.0
    anomaly_votes_m: int = 3
    recovery_window_r: int = 3
    # "<device_id>/<service_id>" -> partial override of the scalar fields above
    per_service: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def resolve(self, device_id: str, service_id: str) -> "DetectorParams":
        """Effective parameters for one service: defaults merged with overrides."""
        merged = {
            f.name: getattr(self, f.name) for f in fields(self) if f.name != "per_service"
        }
        merged.update(self.per_service.get(f"{device_id}/{service_id}", {}))
        return DetectorParams(per_service={}, **merged)


@dataclass(frozen=True)
class ScenarioConfig:
    devices: tuple[DeviceDescriptor, ...]
    faults: tuple[FaultSpec, ...]
    duration_s: float
    speedup: float
    policy: Policy
    detector_params: DetectorParams

    @property
    def duration_ms(self) -> int:
        return ms_from_s(self.duration_s)

    def device(self, device_id: str) -> DeviceDescriptor:
        for d in self.devices:
            if d.device_id == device_id:
                return d
        raise KeyError(device_id)
