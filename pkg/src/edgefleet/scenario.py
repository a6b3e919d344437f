"""Scenario file validation: raw JSON document -> ScenarioConfig, with every
violation reported individually against the path that caused it."""
from __future__ import annotations

import json
import math
from dataclasses import fields
from pathlib import Path
from typing import Any, Optional

from .model import (
    DetectorParams,
    DeviceDescriptor,
    EnergyProfile,
    FaultKind,
    FaultSpec,
    MAX_SEED,
    Policy,
    ScenarioConfig,
    SensorKind,
    SensorModel,
    ServiceDescriptor,
    ServiceEnergyCost,
    ms_from_s,
)

_PARAM_FIELDS = {f.name for f in fields(DetectorParams) if f.name != "per_service"}
_INT_PARAMS = {"missed_reports_k", "zscore_window", "anomaly_votes_m", "recovery_window_r"}


class ScenarioValidationError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(errors))


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


class _Checker:
    def __init__(self) -> None:
        self.errors: list[str] = []

    def fail(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")

    def obj(self, raw: Any, path: str, required: set[str], optional: set[str] = frozenset()) -> bool:
        if not isinstance(raw, dict):
            self.fail(path, "expected an object")
            return False
        ok = True
        for key in raw:
            if key not in required and key not in optional:
                self.fail(f"{path}.{key}", "unknown key")
                ok = False
        for key in required:
            if key not in raw:
                self.fail(f"{path}.{key}", "missing required key")
                ok = False
        return ok

    def string(self, raw: dict, path: str, key: str, non_empty: bool = True) -> Optional[str]:
        v = raw.get(key)
        if not isinstance(v, str):
            self.fail(f"{path}.{key}", "expected a string")
            return None
        if non_empty and not v:
            self.fail(f"{path}.{key}", "must be non-empty")
            return None
        return v

    def number(
        self,
        raw: dict,
        path: str,
        key: str,
        minimum: Optional[float] = None,
        exclusive_minimum: Optional[float] = None,
        maximum: Optional[float] = None,
        whole_ms: bool = False,
    ) -> Optional[float]:
        v = raw.get(key)
        if not _is_number(v) or not math.isfinite(v):
            self.fail(f"{path}.{key}", "expected a finite number")
            return None
        if minimum is not None and v < minimum:
            self.fail(f"{path}.{key}", f"must be >= {minimum}")
            return None
        if exclusive_minimum is not None and v <= exclusive_minimum:
            self.fail(f"{path}.{key}", f"must be > {exclusive_minimum}")
            return None
        if maximum is not None and v > maximum:
            self.fail(f"{path}.{key}", f"must be <= {maximum}")
            return None
        if whole_ms:
            try:
                ms_from_s(v)
            except ValueError:
                self.fail(f"{path}.{key}", "must sit on the millisecond grid")
                return None
        return v

    def integer(self, raw: dict, path: str, key: str, minimum: int = 0, maximum: Optional[int] = None) -> Optional[int]:
        v = raw.get(key)
        if not _is_int(v):
            self.fail(f"{path}.{key}", "expected an integer")
            return None
        if v < minimum:
            self.fail(f"{path}.{key}", f"must be >= {minimum}")
            return None
        if maximum is not None and v > maximum:
            self.fail(f"{path}.{key}", f"must be <= {maximum}")
            return None
        return v

    def enum(self, raw: dict, path: str, key: str, enum_cls) -> Optional[Any]:
        v = raw.get(key)
        values = [e.value for e in enum_cls]
        if not isinstance(v, str) or v not in values:
            self.fail(f"{path}.{key}", f"expected one of {values}")
            return None
        return enum_cls(v)


def _parse_sensor(c: _Checker, raw: Any, path: str) -> Optional[SensorModel]:
    if not c.obj(raw, path, {"kind", "baseline", "diurnal_amplitude", "noise_sigma", "unit"}):
        return None
    kind = c.enum(raw, path, "kind", SensorKind)
    baseline = c.number(raw, path, "baseline")
    amplitude = c.number(raw, path, "diurnal_amplitude", minimum=0.0)
    sigma = c.number(raw, path, "noise_sigma", minimum=0.0)
    unit = c.string(raw, path, "unit", non_empty=False)
    if None in (kind, baseline, amplitude, sigma) or unit is None:
        return None
    return SensorModel(kind, baseline, amplitude, sigma, unit)


def _parse_energy_cost(c: _Checker, raw: Any, path: str) -> Optional[ServiceEnergyCost]:
    if not c.obj(raw, path, {"sample_current_mA", "sample_duration_s"}):
        return None
    current = c.number(raw, path, "sample_current_mA", minimum=0.0)
    duration = c.number(raw, path, "sample_duration_s", minimum=0.0, whole_ms=True)
    if current is None or duration is None:
        return None
    return ServiceEnergyCost(current, duration)


def parse_service(c: _Checker, raw: Any, path: str) -> Optional[ServiceDescriptor]:
    required = {"service_id", "sensor", "report_interval_s", "code_version", "energy_cost"}
    if not c.obj(raw, path, required):
        return None
    service_id = c.string(raw, path, "service_id")
    sensor = _parse_sensor(c, raw.get("sensor"), f"{path}.sensor")
    interval = c.number(raw, path, "report_interval_s", exclusive_minimum=0.0, whole_ms=True)
    version = c.integer(raw, path, "code_version", minimum=0)
    cost = _parse_energy_cost(c, raw.get("energy_cost"), f"{path}.energy_cost")
    if None in (sensor, interval, version, cost) or service_id is None:
        return None
    return ServiceDescriptor(service_id, sensor, interval, version, cost)


def parse_service_descriptor(raw: Any) -> ServiceDescriptor:
    """Validate a standalone service descriptor, as carried by install and
    update requests."""
    c = _Checker()
    svc = parse_service(c, raw, "descriptor")
    if svc is None:
        raise ScenarioValidationError(c.errors)
    return svc


def _parse_profile(c: _Checker, raw: Any, path: str) -> Optional[EnergyProfile]:
    required = {
        "sleep_current_mA",
        "mcu_active_current_mA",
        "wake_duration_s",
        "radio_tx_current_mA",
        "radio_tx_duration_s",
    }
    if not c.obj(raw, path, required):
        return None
    sleep = c.number(raw, path, "sleep_current_mA", minimum=0.0)
    mcu = c.number(raw, path, "mcu_active_current_mA", minimum=0.0)
    wake = c.number(raw, path, "wake_duration_s", minimum=0.0, whole_ms=True)
    tx_current = c.number(raw, path, "radio_tx_current_mA", minimum=0.0)
    tx_duration = c.number(raw, path, "radio_tx_duration_s", minimum=0.0, whole_ms=True)
    if None in (sleep, mcu, wake, tx_current, tx_duration):
        return None
    if mcu < sleep:
        c.fail(f"{path}.mcu_active_current_mA", "must be >= sleep_current_mA")
        return None
    return EnergyProfile(sleep, mcu, wake, tx_current, tx_duration)


def _parse_device(c: _Checker, raw: Any, path: str) -> Optional[DeviceDescriptor]:
    if not c.obj(raw, path, {"device_id", "services", "energy_profile", "rng_seed"}):
        return None
    device_id = c.string(raw, path, "device_id")
    seed = c.integer(raw, path, "rng_seed", minimum=0, maximum=MAX_SEED)
    profile = _parse_profile(c, raw.get("energy_profile"), f"{path}.energy_profile")
    services_raw = raw.get("services")
    services: list[ServiceDescriptor] = []
    if not isinstance(services_raw, list):
        c.fail(f"{path}.services", "expected a list")
        return None
    seen: set[str] = set()
    ok = True
    for i, svc_raw in enumerate(services_raw):
        svc = parse_service(c, svc_raw, f"{path}.services[{i}]")
        if svc is None:
            ok = False
            continue
        if svc.service_id in seen:
            c.fail(f"{path}.services[{i}].service_id", f'duplicate service_id "{svc.service_id}"')
            ok = False
            continue
        seen.add(svc.service_id)
        services.append(svc)
    if not ok or device_id is None or seed is None or profile is None:
        return None
    return DeviceDescriptor(device_id, tuple(services), profile, seed)


def _parse_fault(c: _Checker, raw: Any, path: str) -> Optional[FaultSpec]:
    if not c.obj(
        raw, path, {"device_id", "service_id", "start_s", "kind", "magnitude"}, {"outlier_probability"}
    ):
        return None
    device_id = c.string(raw, path, "device_id")
    service_id = c.string(raw, path, "service_id")
    start = c.number(raw, path, "start_s", minimum=0.0, whole_ms=True)
    kind = c.enum(raw, path, "kind", FaultKind)
    magnitude = c.number(raw, path, "magnitude")
    probability: Optional[float] = None
    if kind is FaultKind.offset_outlier:
        if "outlier_probability" not in raw:
            c.fail(f"{path}.outlier_probability", "required for offset_outlier faults")
            return None
        probability = c.number(raw, path, "outlier_probability", minimum=0.0, maximum=1.0)
        if probability is None:
            return None
    elif kind is not None and "outlier_probability" in raw:
        c.fail(f"{path}.outlier_probability", f"not allowed for {kind.value} faults")
        return None
    if None in (start, kind, magnitude) or device_id is None or service_id is None:
        return None
    return FaultSpec(device_id, service_id, start, kind, magnitude, probability)


def _parse_params(c: _Checker, raw: Any, path: str, known: set[str]) -> Optional[DetectorParams]:
    if raw is None:
        return DetectorParams()
    if not c.obj(raw, path, set(), _PARAM_FIELDS | {"per_service"}):
        return None
    values: dict[str, Any] = {}
    ok = True

    def scalar(source: dict, prefix: str, name: str) -> Optional[float]:
        if name not in source:
            return getattr(DetectorParams(), name)
        if name in _INT_PARAMS:
            minimum = 5 if name == "zscore_window" else 1
            return c.integer(source, prefix, name, minimum=minimum)
        if name == "availability_grace":
            return c.number(source, prefix, name, exclusive_minimum=1.0)
        if name == "ph_delta":
            return c.number(source, prefix, name, minimum=0.0)
        return c.number(source, prefix, name, exclusive_minimum=0.0)

    for name in sorted(_PARAM_FIELDS):
        v = scalar(raw, path, name)
        if v is None:
            ok = False
        else:
            values[name] = v

    per_service: dict[str, dict[str, float]] = {}
    raw_per = raw.get("per_service", {})
    if not isinstance(raw_per, dict):
        c.fail(f"{path}.per_service", "expected an object")
        ok = False
    else:
        for key, overrides in raw_per.items():
            kpath = f"{path}.per_service[{key!r}]"
            if key not in known:
                c.fail(kpath, "unknown service reference")
                ok = False
                continue
            if not isinstance(overrides, dict):
                c.fail(kpath, "expected an object")
                ok = False
                continue
            entry: dict[str, float] = {}
            for name in overrides:
                if name not in _PARAM_FIELDS:
                    c.fail(f"{kpath}.{name}", "unknown detector parameter")
                    ok = False
                    continue
                v = scalar(overrides, kpath, name)
                if v is None:
                    ok = False
                else:
                    entry[name] = v
            per_service[key] = entry
    if not ok:
        return None
    return DetectorParams(per_service=per_service, **values)


def validate_scenario(raw: Any) -> ScenarioConfig:
    """Check every invariant of the scenario document; raises
    ScenarioValidationError carrying one message per violation."""
    c = _Checker()
    if not c.obj(
        raw,
        "$",
        {"devices", "duration_s", "speedup", "policy"},
        {"faults", "detector_params"},
    ):
        raise ScenarioValidationError(c.errors)

    duration = c.number(raw, "$", "duration_s", exclusive_minimum=0.0, whole_ms=True)
    speedup = c.number(raw, "$", "speedup", exclusive_minimum=0.0)
    policy = c.enum(raw, "$", "policy", Policy)

    devices: list[DeviceDescriptor] = []
    known_services: set[str] = set()
    raw_devices = raw.get("devices")
    if not isinstance(raw_devices, list):
        c.fail("$.devices", "expected a list")
    else:
        seen_devices: set[str] = set()
        for i, dev_raw in enumerate(raw_devices):
            dev = _parse_device(c, dev_raw, f"$.devices[{i}]")
            if dev is None:
                continue
            if dev.device_id in seen_devices:
                c.fail(f"$.devices[{i}].device_id", f'duplicate device_id "{dev.device_id}"')
                continue
            seen_devices.add(dev.device_id)
            devices.append(dev)
            for svc in dev.services:
                known_services.add(f"{dev.device_id}/{svc.service_id}")

    faults: list[FaultSpec] = []
    raw_faults = raw.get("faults", [])
    if not isinstance(raw_faults, list):
        c.fail("$.faults", "expected a list")
    else:
        for i, fault_raw in enumerate(raw_faults):
            fault = _parse_fault(c, fault_raw, f"$.faults[{i}]")
            if fault is None:
                continue
            if f"{fault.device_id}/{fault.service_id}" not in known_services:
                c.fail(f"$.faults[{i}]", "unknown service reference")
                continue
            if duration is not None and fault.start_s >= duration:
                c.fail(f"$.faults[{i}].start_s", "must be < duration_s")
                continue
            faults.append(fault)

    params = _parse_params(c, raw.get("detector_params"), "$.detector_params", known_services)

    if c.errors:
        raise ScenarioValidationError(c.errors)
    assert duration is not None and speedup is not None and policy is not None and params is not None
    return ScenarioConfig(
        devices=tuple(devices),
        faults=tuple(faults),
        duration_s=duration,
        speedup=speedup,
        policy=policy,
        detector_params=params,
    )


def service_to_raw(svc: ServiceDescriptor) -> dict:
    return {
        "service_id": svc.service_id,
        "sensor": {
            "kind": svc.sensor.kind.value,
            "baseline": svc.sensor.baseline,
            "diurnal_amplitude": svc.sensor.diurnal_amplitude,
            "noise_sigma": svc.sensor.noise_sigma,
            "unit": svc.sensor.unit,
        },
        "report_interval_s": svc.report_interval_s,
        "code_version": svc.code_version,
        "energy_cost": {
            "sample_current_mA": svc.energy_cost.sample_current_mA,
            "sample_duration_s": svc.energy_cost.sample_duration_s,
        },
    }


def scenario_to_raw(config: ScenarioConfig) -> dict:
    params = config.detector_params
    raw: dict = {
        "devices": [
            {
                "device_id": d.device_id,
                "services": [service_to_raw(s) for s in d.services],
                "energy_profile": {
                    "sleep_current_mA": d.energy_profile.sleep_current_mA,
                    "mcu_active_current_mA": d.energy_profile.mcu_active_current_mA,
                    "wake_duration_s": d.energy_profile.wake_duration_s,
                    "radio_tx_current_mA": d.energy_profile.radio_tx_current_mA,
                    "radio_tx_duration_s": d.energy_profile.radio_tx_duration_s,
                },
                "rng_seed": d.rng_seed,
            }
            for d in config.devices
        ],
        "faults": [
            {
                "device_id": f.device_id,
                "service_id": f.service_id,
                "start_s": f.start_s,
                "kind": f.kind.value,
                "magnitude": f.magnitude,
                **(
                    {"outlier_probability": f.outlier_probability}
                    if f.outlier_probability is not None
                    else {}
                ),
            }
            for f in config.faults
        ],
        "duration_s": config.duration_s,
        "speedup": config.speedup,
        "policy": config.policy.value,
        "detector_params": {
            "availability_grace": params.availability_grace,
            "missed_reports_k": params.missed_reports_k,
            "zscore_threshold": params.zscore_threshold,
            "zscore_window": params.zscore_window,
            "ph_delta": params.ph_delta,
            "ph_lambda": params.ph_lambda,
            "anomaly_votes_m": params.anomaly_votes_m,
            "recovery_window_r": params.recovery_window_r,
            "per_service": {k: dict(v) for k, v in params.per_service.items()},
        },
    }
    return raw


def load_scenario(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioValidationError([f"$: not valid JSON ({exc})"]) from exc
    return validate_scenario(raw)


def dump_scenario(config: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scenario_to_raw(config), indent=2, sort_keys=False) + "\n", encoding="utf-8"
    )
