"""Emulated fleet of duty-cycled sensor devices with remote health monitoring,
lifecycle orchestration, and exact energy accounting."""

from .control import ControlPlane, OrchestrationError, detect_drift, detect_outlier
from .device import DeviceRuntime, service_rng
from .energy import EnergyError, EnergyEvent, EnergyEventKind, EnergyTrace, average_current, interval_charge
from .experiment import ExperimentError, ExperimentReport, run_paper_experiment
from .health import health_transition
from .model import (
    DetectorParams,
    DeviceDescriptor,
    EnergyProfile,
    FaultKind,
    FaultSpec,
    Health,
    HealthState,
    HealthVerdict,
    LifecycleAction,
    LifecycleState,
    Measurement,
    Policy,
    ScenarioConfig,
    SensorKind,
    SensorModel,
    ServiceDescriptor,
    ServiceEnergyCost,
    VerdictReason,
    action_legal,
)
from .replay import ReplayCorruptError, ReplayResult, replay_events, replay_file
from .report import build_summary, write_run_artifacts
from .runner import RunResult, ScriptedAction, SimulationRun, run_scenario
from .scenario import (
    ScenarioValidationError,
    dump_scenario,
    load_scenario,
    scenario_to_raw,
    validate_scenario,
)
from .wire import BusMessage, CommandPayload, WireError, decode, encode, make_topic, parse_topic

__version__ = "0.1.0"

__all__ = [
    "BusMessage",
    "CommandPayload",
    "ControlPlane",
    "DetectorParams",
    "DeviceDescriptor",
    "DeviceRuntime",
    "EnergyError",
    "EnergyEvent",
    "EnergyEventKind",
    "EnergyProfile",
    "EnergyTrace",
    "ExperimentError",
    "ExperimentReport",
    "FaultKind",
    "FaultSpec",
    "Health",
    "HealthState",
    "HealthVerdict",
    "LifecycleAction",
    "LifecycleState",
    "Measurement",
    "OrchestrationError",
    "Policy",
    "ReplayCorruptError",
    "ReplayResult",
    "RunResult",
    "ScenarioConfig",
    "ScenarioValidationError",
    "ScriptedAction",
    "SensorKind",
    "SensorModel",
    "ServiceDescriptor",
    "ServiceEnergyCost",
    "SimulationRun",
    "VerdictReason",
    "action_legal",
    "average_current",
    "build_summary",
    "decode",
    "detect_drift",
    "detect_outlier",
    "dump_scenario",
    "encode",
    "health_transition",
    "interval_charge",
    "load_scenario",
    "make_topic",
    "parse_topic",
    "replay_events",
    "replay_file",
    "run_paper_experiment",
    "run_scenario",
    "scenario_to_raw",
    "service_rng",
    "validate_scenario",
    "write_run_artifacts",
]
