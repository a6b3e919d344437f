"""Managed-vs-unmanaged energy comparison on the two-service reference scenario.

Runs the same scenario twice with the same seed: once with the automatic
stop-on-suspicious policy (plus uninstall once the stop is acknowledged) and
once with no management at all. The difference in average current over the
post-fault window is the energy saved by remote management. Charges are kept
as exact rationals end to end; floats appear only in the report fields.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .energy import EnergyTrace
from .model import (
    MS_PER_S,
    EnergyProfile,
    Policy,
    ScenarioConfig,
    SensorKind,
)
from .runner import RunResult, run_scenario


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentReport:
    managed_avg_mA: float
    unmanaged_avg_mA: float
    delta_mA: float
    windows: dict[str, dict[str, float]]
    exact: dict[str, tuple[Fraction, Fraction]]
    managed: RunResult
    unmanaged: RunResult


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ExperimentError(f"scenario shape mismatch: {message}")


def validate_experiment_scenario(scenario: ScenarioConfig) -> None:
    """Reject scenarios that do not match the reference comparison shape.

    One device running two periodic services on a shared interval, with a
    single fault that hits the gas sensor partway through the run on an
    interval boundary. Anything else makes the managed/unmanaged windows
    meaningless, so it is refused up front rather than producing a report
    with misleading numbers.
    """
    _require(len(scenario.devices) == 1, "expected exactly one device")
    device = scenario.devices[0]
    _require(len(device.services) == 2, "expected exactly two services")
    intervals = {svc.interval_ms for svc in device.services}
    _require(len(intervals) == 1, "services must share one report interval")
    interval_ms = intervals.pop()
    co2_ids = {svc.service_id for svc in device.services if svc.sensor.kind is SensorKind.co2}
    _require(len(co2_ids) == 1, "expected exactly one co2 service")
    _require(len(scenario.faults) == 1, "expected exactly one fault")
    fault = scenario.faults[0]
    _require(fault.service_id in co2_ids, "fault must target the co2 service")
    _require(fault.start_ms % interval_ms == 0, "fault start must land on the report grid")
    _require(0 < fault.start_ms < scenario.duration_ms, "fault must start mid-run")


def _avg_mA(trace: EnergyTrace, a_ms: int, b_ms: int) -> Fraction:
    return trace.charge_between(a_ms, b_ms) * MS_PER_S / (b_ms - a_ms)


def run_paper_experiment(
    scenario: ScenarioConfig,
    seed: int,
    profile: Optional[EnergyProfile] = None,
) -> ExperimentReport:
    """Run the managed/unmanaged pair and report average-current savings.

    ``profile`` optionally replaces the device's energy profile, which lets
    the same scenario be re-priced under different hardware assumptions
    without touching the timeline.
    """
    validate_experiment_scenario(scenario)
    if profile is not None:
        device = dataclasses.replace(scenario.devices[0], energy_profile=profile)
        scenario = dataclasses.replace(scenario, devices=(device,))

    managed = run_scenario(
        scenario,
        seed,
        policy=Policy.auto_stop_on_suspicious,
        uninstall_after_stop=True,
    )
    unmanaged = run_scenario(scenario, seed, policy=Policy.manual)

    device_id = scenario.devices[0].device_id
    managed_trace = managed.traces[device_id]
    unmanaged_trace = unmanaged.traces[device_id]
    boundary_ms = scenario.faults[0].start_ms
    duration_ms = scenario.duration_ms

    spans = {
        "full": (0, duration_ms),
        "pre_fault": (0, boundary_ms),
        "post_fault": (boundary_ms, duration_ms),
    }
    exact: dict[str, tuple[Fraction, Fraction]] = {}
    windows: dict[str, dict[str, float]] = {}
    for name, (a, b) in spans.items():
        m = _avg_mA(managed_trace, a, b)
        u = _avg_mA(unmanaged_trace, a, b)
        exact[name] = (m, u)
        windows[name] = {
            "managed_mA": float(m),
            "unmanaged_mA": float(u),
            "delta_mA": float(u - m),
        }

    pre_m, pre_u = exact["pre_fault"]
    if pre_m != pre_u:
        raise ExperimentError(
            "pre-fault averages diverged; the managed run acted before the fault"
        )

    post_m, post_u = exact["post_fault"]
    return ExperimentReport(
        managed_avg_mA=float(post_m),
        unmanaged_avg_mA=float(post_u),
        delta_mA=float(post_u - post_m),
        windows=windows,
        exact=exact,
        managed=managed,
        unmanaged=unmanaged,
    )
