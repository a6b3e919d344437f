// The dashboard's whole model is a fold over the event stream: feeding the
// same events in the same order always rebuilds the same state, so a page
// reload (which replays the backlog) lands exactly where it left off. User
// input never mutates this state directly; it only causes HTTP requests whose
// consequences come back as stream events.

import type {
  AckEvent,
  CommandEvent,
  EnergyWindowEvent,
  HealthName,
  Lifecycle,
  LifecycleEvent,
  MeasurementEvent,
  RecommendationEvent,
  RunHeaderEvent,
  StateChangeEvent,
  StreamEvent,
} from "./types.js";

export const SERIES_CAP = 120;
export const TRANSITIONS_CAP = 50;
export const ACTIVITY_CAP = 200;
export const WINDOWS_CAP = 64;

export interface SeriesPoint {
  tS: number;
  value: number;
  /** True when the service was already marked Suspicious at ingest time. */
  flagged: boolean;
}

export interface HealthView {
  state: HealthName;
  reason: string;
  sinceS: number;
}

export interface TransitionView {
  tS: number;
  state: HealthName;
  reason: string;
}

export interface ServiceView {
  serviceId: string;
  lifecycle: Lifecycle | null;
  codeVersion: number | null;
  intervalS: number | null;
  health: HealthView;
  lastValue: number | null;
  lastSeenS: number | null;
  series: SeriesPoint[];
  transitions: TransitionView[];
}

export interface VariantTotals {
  chargeMAs: number;
  coveredS: number;
}

export interface WindowPair {
  startS: number;
  endS: number;
  live: number | null;
  baseline: number | null;
}

export interface DeviceEnergy {
  windows: WindowPair[];
  live: VariantTotals;
  baseline: VariantTotals;
}

export interface DeviceView {
  deviceId: string;
  services: Map<string, ServiceView>;
  lastEvalS: number | null;
  energy: DeviceEnergy;
}

export type ActivityLevel = "info" | "warn" | "error";

export interface ActivityEntry {
  seq: number;
  tS: number | null;
  level: ActivityLevel;
  text: string;
}

export interface PendingCommand {
  deviceId: string;
  serviceId: string;
  action: string;
  tS: number;
}

export interface AppState {
  meta: {
    seed: number | null;
    policy: string | null;
    speedup: number | null;
    durationS: number | null;
  };
  devices: Map<string, DeviceView>;
  pending: Map<string, PendingCommand>;
  activity: ActivityEntry[];
  runComplete: boolean;
  eventCount: number;
  /** Latest simulated timestamp seen on any event. */
  nowS: number | null;
}

export function initialState(): AppState {
  return {
    meta: { seed: null, policy: null, speedup: null, durationS: null },
    devices: new Map(),
    pending: new Map(),
    activity: [],
    runComplete: false,
    eventCount: 0,
    nowS: null,
  };
}

/** Running average over every window seen so far for one variant. */
export function runningAverage(totals: VariantTotals): number | null {
  if (totals.coveredS <= 0) {
    return null;
  }
  return totals.chargeMAs / totals.coveredS;
}

function ensureDevice(state: AppState, deviceId: string): DeviceView {
  let device = state.devices.get(deviceId);
  if (device === undefined) {
    device = {
      deviceId,
      services: new Map(),
      lastEvalS: null,
      energy: {
        windows: [],
        live: { chargeMAs: 0, coveredS: 0 },
        baseline: { chargeMAs: 0, coveredS: 0 },
      },
    };
    state.devices.set(deviceId, device);
  }
  return device;
}

function ensureService(device: DeviceView, serviceId: string): ServiceView {
  let service = device.services.get(serviceId);
  if (service === undefined) {
    service = {
      serviceId,
      lifecycle: null,
      codeVersion: null,
      intervalS: null,
      health: { state: "Normal", reason: "ok", sinceS: 0 },
      lastValue: null,
      lastSeenS: null,
      series: [],
      transitions: [],
    };
    device.services.set(serviceId, service);
  }
  return service;
}

function log(state: AppState, tS: number | null, level: ActivityLevel, text: string): void {
  state.activity.push({ seq: state.eventCount, tS, level, text });
  if (state.activity.length > ACTIVITY_CAP) {
    state.activity.splice(0, state.activity.length - ACTIVITY_CAP);
  }
}

function onRunHeader(state: AppState, event: RunHeaderEvent): void {
  state.meta = {
    seed: event.seed,
    policy: event.policy,
    speedup: event.speedup,
    durationS: event.duration_s,
  };
  for (const deviceId of Object.keys(event.devices).sort()) {
    const device = ensureDevice(state, deviceId);
    const services = event.devices[deviceId]?.services ?? {};
    for (const serviceId of Object.keys(services).sort()) {
      const declared = services[serviceId];
      if (declared === undefined) {
        continue;
      }
      const service = ensureService(device, serviceId);
      service.intervalS = declared.interval_s;
      service.codeVersion = declared.code_version;
    }
  }
  log(state, 0, "info", `run started: policy ${event.policy}, speedup ${event.speedup}x`);
}

function onLifecycle(state: AppState, event: LifecycleEvent): void {
  const service = ensureService(ensureDevice(state, event.device_id), event.service_id);
  service.lifecycle = event.state;
  service.codeVersion = event.code_version;
  service.intervalS = event.interval_s;
  log(
    state,
    event.timestamp_s,
    "info",
    `${event.device_id}/${event.service_id}: ${event.action} -> ${event.state}`,
  );
}

function onMeasurement(state: AppState, event: MeasurementEvent): void {
  const service = ensureService(ensureDevice(state, event.device_id), event.service_id);
  service.lastValue = event.value;
  service.lastSeenS = event.timestamp_s;
  service.series.push({
    tS: event.timestamp_s,
    value: event.value,
    flagged: service.health.state === "Suspicious",
  });
  if (service.series.length > SERIES_CAP) {
    service.series.splice(0, service.series.length - SERIES_CAP);
  }
}

function onStateChange(state: AppState, event: StateChangeEvent): void {
  const service = ensureService(ensureDevice(state, event.device_id), event.service_id);
  service.health = { state: event.state, reason: event.reason, sinceS: event.since_s };
  service.transitions.push({ tS: event.t_s, state: event.state, reason: event.reason });
  if (service.transitions.length > TRANSITIONS_CAP) {
    service.transitions.splice(0, service.transitions.length - TRANSITIONS_CAP);
  }
  log(
    state,
    event.t_s,
    event.state === "Suspicious" ? "warn" : "info",
    `${event.device_id}/${event.service_id}: health ${event.state} (${event.reason})`,
  );
}

function onRecommendation(state: AppState, event: RecommendationEvent): void {
  log(
    state,
    event.t_s,
    "warn",
    `recommendation: ${event.action} ${event.device_id}/${event.service_id} (${event.reason})`,
  );
}

function onCommand(state: AppState, event: CommandEvent): void {
  state.pending.set(event.command_id, {
    deviceId: event.device_id,
    serviceId: event.service_id,
    action: event.action,
    tS: event.t_s,
  });
  log(
    state,
    event.t_s,
    "info",
    `command ${event.command_id}: ${event.action} ${event.device_id}/${event.service_id} dispatched`,
  );
}

function onAck(state: AppState, event: AckEvent): void {
  state.pending.delete(event.command_id);
  if (event.ok) {
    log(
      state,
      event.timestamp_s,
      "info",
      `ack ${event.command_id}: ${event.action} ${event.device_id}/${event.service_id} ok (${event.state})`,
    );
  } else {
    log(
      state,
      event.timestamp_s,
      "error",
      `ack ${event.command_id}: ${event.action} ${event.device_id}/${event.service_id} failed: ${event.error ?? "unknown error"}`,
    );
  }
}

function onEnergyWindow(state: AppState, event: EnergyWindowEvent): void {
  const device = ensureDevice(state, event.device_id);
  const spanS = event.window_end_s - event.window_start_s;
  const totals = device.energy[event.variant];
  totals.chargeMAs += event.avg_current_mA * spanS;
  totals.coveredS += spanS;

  // Live and baseline rows for the same window share bounds; merge them.
  let pair: WindowPair | undefined;
  for (let i = device.energy.windows.length - 1; i >= 0; i--) {
    const candidate = device.energy.windows[i];
    if (candidate !== undefined && candidate.startS === event.window_start_s) {
      pair = candidate;
      break;
    }
  }
  if (pair === undefined) {
    pair = { startS: event.window_start_s, endS: event.window_end_s, live: null, baseline: null };
    device.energy.windows.push(pair);
    if (device.energy.windows.length > WINDOWS_CAP) {
      device.energy.windows.splice(0, device.energy.windows.length - WINDOWS_CAP);
    }
  }
  pair[event.variant] = event.avg_current_mA;
}

function timestampOf(event: StreamEvent): number | null {
  switch (event.type) {
    case "run_header":
      return 0;
    case "lifecycle":
    case "fault_armed":
    case "measurement":
    case "ack":
      return event.timestamp_s;
    case "eval":
    case "state_change":
    case "recommendation":
    case "command":
    case "run_end":
      return event.t_s;
    case "energy_window":
      return event.window_end_s;
  }
}

/**
 * Apply one event. Mutates and returns the given state; determinism comes
 * from the event order, which the server fixes for every subscriber.
 */
export function reduce(state: AppState, event: StreamEvent): AppState {
  state.eventCount += 1;
  const tS = timestampOf(event);
  if (tS !== null && (state.nowS === null || tS > state.nowS)) {
    state.nowS = tS;
  }
  switch (event.type) {
    case "run_header":
      onRunHeader(state, event);
      break;
    case "lifecycle":
      onLifecycle(state, event);
      break;
    case "fault_armed":
      log(
        state,
        event.timestamp_s,
        "warn",
        `fault armed: ${event.fault_kind} on ${event.device_id}/${event.service_id} from t=${event.start_s}s`,
      );
      break;
    case "measurement":
      onMeasurement(state, event);
      break;
    case "eval":
      ensureDevice(state, event.device_id).lastEvalS = event.t_s;
      break;
    case "state_change":
      onStateChange(state, event);
      break;
    case "recommendation":
      onRecommendation(state, event);
      break;
    case "command":
      onCommand(state, event);
      break;
    case "ack":
      onAck(state, event);
      break;
    case "energy_window":
      onEnergyWindow(state, event);
      break;
    case "run_end":
      state.runComplete = true;
      log(state, event.t_s, "info", "run complete");
      break;
  }
  return state;
}

export function reduceAll(events: Iterable<StreamEvent>): AppState {
  const state = initialState();
  for (const event of events) {
    reduce(state, event);
  }
  return state;
}
