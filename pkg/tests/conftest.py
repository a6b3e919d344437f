"""Shared builders and the acceptance-line reporter."""
from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

from edgefleet.model import (
    DetectorParams,
    DeviceDescriptor,
    EnergyProfile,
    FaultKind,
    FaultSpec,
    Policy,
    ScenarioConfig,
    SensorKind,
    SensorModel,
    ServiceDescriptor,
    ServiceEnergyCost,
)

REPO_ROOT = Path(__file__).resolve().parents[1]
PAPER_SCENARIO = REPO_ROOT / "scenarios" / "paper_experiment.json"


def make_sensor(
    kind: SensorKind = SensorKind.temperature,
    baseline: float = 20.0,
    amplitude: float = 0.0,
    sigma: float = 0.1,
    unit: str = "C",
) -> SensorModel:
    return SensorModel(kind, baseline, amplitude, sigma, unit)


def make_service(
    service_id: str = "svc-1",
    interval_s: float = 600.0,
    version: int = 1,
    sensor: Optional[SensorModel] = None,
    sample_mA: float = 1.0,
    sample_s: float = 0.1,
) -> ServiceDescriptor:
    return ServiceDescriptor(
        service_id=service_id,
        sensor=sensor or make_sensor(),
        report_interval_s=interval_s,
        code_version=version,
        energy_cost=ServiceEnergyCost(sample_mA, sample_s),
    )


def make_profile(
    sleep: float = 0.01,
    mcu: float = 40.0,
    wake_s: float = 2.0,
    tx_mA: float = 120.0,
    tx_s: float = 0.2,
) -> EnergyProfile:
    return EnergyProfile(sleep, mcu, wake_s, tx_mA, tx_s)


def make_device(
    device_id: str = "dev-1",
    services: Optional[Sequence[ServiceDescriptor]] = None,
    seed: int = 1,
    profile: Optional[EnergyProfile] = None,
) -> DeviceDescriptor:
    if services is None:
        services = (make_service(),)
    return DeviceDescriptor(device_id, tuple(services), profile or make_profile(), seed)


def make_scenario(
    devices: Optional[Sequence[DeviceDescriptor]] = None,
    faults: Sequence[FaultSpec] = (),
    duration_s: float = 3600.0,
    speedup: float = 360.0,
    policy: Policy = Policy.manual,
    params: Optional[DetectorParams] = None,
) -> ScenarioConfig:
    if devices is None:
        devices = (make_device(),)
    return ScenarioConfig(
        devices=tuple(devices),
        faults=tuple(faults),
        duration_s=duration_s,
        speedup=speedup,
        policy=policy,
        detector_params=params or DetectorParams(),
    )


def make_fault(
    device_id: str = "dev-1",
    service_id: str = "svc-1",
    start_s: float = 1800.0,
    kind: FaultKind = FaultKind.dropout,
    magnitude: float = 0.0,
    outlier_probability: Optional[float] = None,
) -> FaultSpec:
    return FaultSpec(device_id, service_id, start_s, kind, magnitude, outlier_probability)


_acceptance_results: list[tuple[str, bool]] = []


def record_acceptance(name: str, passed: bool) -> None:
    _acceptance_results.append((name, passed))
    print(f"\n[ACCEPTANCE] {name}: {'PASSED' if passed else 'FAILED'}")


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    if not _acceptance_results:
        return
    terminalreporter.write_line("")
    for name, passed in _acceptance_results:
        terminalreporter.write_line(f"[ACCEPTANCE] {name}: {'PASSED' if passed else 'FAILED'}")
