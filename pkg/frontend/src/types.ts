// Shapes shared with the management API and the event stream. Field names
// mirror the JSON on the wire exactly, so no mapping layer is needed.

export type Lifecycle = "Installed" | "Running" | "Stopped" | "Uninstalled";
export type HealthName = "Normal" | "Suspicious";
export type EnergyVariant = "live" | "baseline";

export interface DetectorParams {
  availability_grace: number;
  missed_reports_k: number;
  zscore_threshold: number;
  zscore_window: number;
  ph_delta: number;
  ph_lambda: number;
  anomaly_votes_m: number;
  recovery_window_r: number;
}

// ---- stream events ---------------------------------------------------------

export interface RunHeaderEvent {
  type: "run_header";
  seed: number;
  policy: string;
  speedup: number;
  duration_s: number;
  lossy_drop_probability: number;
  devices: Record<
    string,
    {
      services: Record<
        string,
        { interval_s: number; code_version: number; params: DetectorParams }
      >;
    }
  >;
}

export interface LifecycleEvent {
  type: "lifecycle";
  kind: "lifecycle";
  device_id: string;
  service_id: string;
  action: string;
  state: Lifecycle;
  code_version: number;
  interval_s: number;
  timestamp_s: number;
}

export interface FaultArmedEvent {
  type: "fault_armed";
  device_id: string;
  service_id: string;
  fault_kind: string;
  start_s: number;
  timestamp_s: number;
}

export interface MeasurementEvent {
  type: "measurement";
  device_id: string;
  service_id: string;
  timestamp_s: number;
  value: number;
  code_version: number;
}

export interface EvalEvent {
  type: "eval";
  device_id: string;
  t_s: number;
}

export interface StateChangeEvent {
  type: "state_change";
  device_id: string;
  service_id: string;
  state: HealthName;
  since_s: number;
  reason: string;
  t_s: number;
}

export interface RecommendationEvent {
  type: "recommendation";
  device_id: string;
  service_id: string;
  action: string;
  reason: string;
  t_s: number;
}

export interface CommandEvent {
  type: "command";
  device_id: string;
  service_id: string;
  action: string;
  command_id: string;
  t_s: number;
}

export interface AckEvent {
  type: "ack";
  kind: "ack";
  device_id: string;
  service_id: string;
  command_id: string;
  action: string;
  ok: boolean;
  state: string;
  timestamp_s: number;
  code_version?: number;
  interval_s?: number;
  error?: string;
}

export interface EnergyWindowEvent {
  type: "energy_window";
  device_id: string;
  window_start_s: number;
  window_end_s: number;
  variant: EnergyVariant;
  avg_current_mA: number;
}

export interface RunEndEvent {
  type: "run_end";
  t_s: number;
}

export type StreamEvent =
  | RunHeaderEvent
  | LifecycleEvent
  | FaultArmedEvent
  | MeasurementEvent
  | EvalEvent
  | StateChangeEvent
  | RecommendationEvent
  | CommandEvent
  | AckEvent
  | EnergyWindowEvent
  | RunEndEvent;

// ---- request/response bodies ------------------------------------------------

export interface ServiceSnapshot {
  service_id: string;
  lifecycle: Lifecycle;
  code_version: number;
  health: { state: HealthName; since_s: number; last_reason: string } | null;
  last_value: number | null;
  last_seen_s: number | null;
}

export interface DeviceSnapshot {
  device_id: string;
  services: ServiceSnapshot[];
}

export interface FleetResponse {
  devices: DeviceSnapshot[];
  now_s: number;
  run_complete: boolean;
  policy: string;
  speedup: number;
}

export interface Verdict {
  available: boolean;
  correct: boolean;
  evaluated_at_s: number;
  reason: string;
}

export interface ServiceDetailResponse {
  device_id: string;
  service_id: string;
  lifecycle: Lifecycle;
  code_version: number;
  health: { state: HealthName; since_s: number; last_reason: string };
  verdicts: Verdict[];
  recent_measurements: { timestamp_s: number; value: number }[];
  detector_params: DetectorParams;
  energy?: { attributed_mA_s: number; device_total_mA_s: number };
}

export interface WindowBlock {
  start_s: number;
  end_s: number;
  live_mA: number;
  baseline_mA: number;
  delta_mA: number;
}

export interface SummaryResponse {
  seed: number;
  policy: string;
  speedup: number;
  duration_s: number;
  fault_boundary_s: number | null;
  devices: Record<
    string,
    {
      windows: {
        full: WindowBlock;
        pre_fault: WindowBlock | null;
        post_fault: WindowBlock | null;
      };
      services: Record<
        string,
        {
          lifecycle: string;
          code_version: number;
          health_state: string;
          last_reason: string;
          measurement_count: number;
        }
      >;
    }
  >;
  fleet_avg_current_mA: {
    full: WindowBlock;
    pre_fault: WindowBlock | null;
    post_fault: WindowBlock | null;
  };
  delta_mA: number | null;
  run_complete?: boolean;
  now_s?: number;
}

export interface ActionRequest {
  action: string;
  descriptor?: unknown;
}

export interface ActionAccepted {
  command_id: string;
  status: string;
}
