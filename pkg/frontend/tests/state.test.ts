import { describe, expect, it } from "vitest";

import {
  ACTIVITY_CAP,
  SERIES_CAP,
  initialState,
  reduce,
  reduceAll,
  runningAverage,
} from "../src/state.js";
import type {
  AckEvent,
  CommandEvent,
  EnergyWindowEvent,
  HealthName,
  Lifecycle,
  LifecycleEvent,
  MeasurementEvent,
  RunHeaderEvent,
  StateChangeEvent,
  StreamEvent,
} from "../src/types.js";

// ---- event builders mirroring the server's JSON ------------------------------

const PARAMS = {
  availability_grace: 1.5,
  missed_reports_k: 2,
  zscore_threshold: 3.5,
  zscore_window: 30,
  ph_delta: 0.05,
  ph_lambda: 5.0,
  anomaly_votes_m: 3,
  recovery_window_r: 3,
};

function runHeader(): RunHeaderEvent {
  return {
    type: "run_header",
    seed: 7,
    policy: "manual",
    speedup: 360,
    duration_s: 4500,
    lossy_drop_probability: 0,
    devices: {
      "dev-1": {
        services: {
          "svc-gas": { interval_s: 300, code_version: 1, params: PARAMS },
          "svc-temp": { interval_s: 300, code_version: 1, params: PARAMS },
        },
      },
    },
  };
}

function lifecycle(
  serviceId: string,
  action: string,
  state: Lifecycle,
  tS: number,
  codeVersion = 1,
): LifecycleEvent {
  return {
    type: "lifecycle",
    kind: "lifecycle",
    device_id: "dev-1",
    service_id: serviceId,
    action,
    state,
    code_version: codeVersion,
    interval_s: 300,
    timestamp_s: tS,
  };
}

function measurement(serviceId: string, tS: number, value: number): MeasurementEvent {
  return {
    type: "measurement",
    device_id: "dev-1",
    service_id: serviceId,
    timestamp_s: tS,
    value,
    code_version: 1,
  };
}

function stateChange(
  serviceId: string,
  health: HealthName,
  reason: string,
  tS: number,
): StateChangeEvent {
  return {
    type: "state_change",
    device_id: "dev-1",
    service_id: serviceId,
    state: health,
    since_s: tS,
    reason,
    t_s: tS,
  };
}

function energyWindow(
  variant: "live" | "baseline",
  startS: number,
  endS: number,
  avg: number,
): EnergyWindowEvent {
  return {
    type: "energy_window",
    device_id: "dev-1",
    window_start_s: startS,
    window_end_s: endS,
    variant,
    avg_current_mA: avg,
  };
}

function command(action: string, commandId: string, tS: number): CommandEvent {
  return {
    type: "command",
    device_id: "dev-1",
    service_id: "svc-gas",
    action,
    command_id: commandId,
    t_s: tS,
  };
}

function ack(commandId: string, ok: boolean, tS: number, error?: string): AckEvent {
  return {
    type: "ack",
    kind: "ack",
    device_id: "dev-1",
    service_id: "svc-gas",
    command_id: commandId,
    action: "stop",
    ok,
    state: ok ? "Stopped" : "Running",
    timestamp_s: tS,
    ...(error === undefined ? {} : { error }),
  };
}

function baseStream(): StreamEvent[] {
  return [
    runHeader(),
    lifecycle("svc-gas", "install", "Installed", 0),
    lifecycle("svc-gas", "start", "Running", 0),
    lifecycle("svc-temp", "install", "Installed", 0),
    lifecycle("svc-temp", "start", "Running", 0),
    measurement("svc-gas", 300, 600.5),
    measurement("svc-temp", 300, 21.9),
    { type: "eval", device_id: "dev-1", t_s: 300 },
    energyWindow("live", 0, 300, 2.0),
    energyWindow("baseline", 0, 300, 2.5),
  ];
}

// ---- tests -------------------------------------------------------------------

describe("reduce", () => {
  it("rebuilds identical state from the same event order", () => {
    const events = [
      ...baseStream(),
      stateChange("svc-gas", "Suspicious", "missed_reports", 1500),
      command("stop", "c1", 1500),
      ack("c1", true, 1800),
      lifecycle("svc-gas", "stop", "Stopped", 1800),
      energyWindow("live", 300, 600, 1.8),
      energyWindow("baseline", 300, 600, 2.4),
      { type: "run_end", t_s: 4500 } as StreamEvent,
    ];
    expect(reduceAll(events)).toEqual(reduceAll(events));
  });

  it("creates the declared fleet from the run header", () => {
    const state = reduceAll([runHeader()]);
    expect([...state.devices.keys()]).toEqual(["dev-1"]);
    const device = state.devices.get("dev-1")!;
    expect([...device.services.keys()]).toEqual(["svc-gas", "svc-temp"]);
    const gas = device.services.get("svc-gas")!;
    expect(gas.intervalS).toBe(300);
    expect(gas.codeVersion).toBe(1);
    expect(gas.lifecycle).toBeNull();
    expect(state.meta).toEqual({ seed: 7, policy: "manual", speedup: 360, durationS: 4500 });
  });

  it("tracks lifecycle transitions and versions", () => {
    const state = reduceAll([
      runHeader(),
      lifecycle("svc-gas", "install", "Installed", 0),
      lifecycle("svc-gas", "start", "Running", 0),
      lifecycle("svc-gas", "update", "Running", 600, 2),
      lifecycle("svc-gas", "stop", "Stopped", 900, 2),
    ]);
    const gas = state.devices.get("dev-1")!.services.get("svc-gas")!;
    expect(gas.lifecycle).toBe("Stopped");
    expect(gas.codeVersion).toBe(2);
  });

  it("updates last value and series from measurements", () => {
    const state = reduceAll(baseStream());
    const gas = state.devices.get("dev-1")!.services.get("svc-gas")!;
    expect(gas.lastValue).toBe(600.5);
    expect(gas.lastSeenS).toBe(300);
    expect(gas.series).toEqual([{ tS: 300, value: 600.5, flagged: false }]);
  });

  it("flags measurements taken while the service is Suspicious", () => {
    const state = reduceAll([
      ...baseStream(),
      stateChange("svc-gas", "Suspicious", "outlier", 600),
      measurement("svc-gas", 600, 900.1),
      stateChange("svc-gas", "Normal", "recovered", 900),
      measurement("svc-gas", 900, 601.0),
    ]);
    const gas = state.devices.get("dev-1")!.services.get("svc-gas")!;
    expect(gas.series.map((p) => p.flagged)).toEqual([false, true, false]);
    expect(gas.health.state).toBe("Normal");
    expect(gas.transitions.map((t) => t.state)).toEqual(["Suspicious", "Normal"]);
  });

  it("keeps health across lifecycle restarts until the monitor says otherwise", () => {
    const state = reduceAll([
      ...baseStream(),
      stateChange("svc-gas", "Suspicious", "missed_reports", 1500),
      lifecycle("svc-gas", "stop", "Stopped", 1800),
      lifecycle("svc-gas", "start", "Running", 2100),
    ]);
    const gas = state.devices.get("dev-1")!.services.get("svc-gas")!;
    expect(gas.lifecycle).toBe("Running");
    expect(gas.health.state).toBe("Suspicious");
  });

  it("caps the measurement series", () => {
    const events: StreamEvent[] = [...baseStream()];
    for (let i = 0; i < SERIES_CAP + 30; i++) {
      events.push(measurement("svc-temp", 300 * (i + 2), 20 + i));
    }
    const temp = reduceAll(events).devices.get("dev-1")!.services.get("svc-temp")!;
    expect(temp.series.length).toBe(SERIES_CAP);
    // one point arrived in baseStream, so 31 of the loop's points scrolled off
    expect(temp.series[0]!.value).toBe(20 + 30);
  });

  it("caps the activity feed", () => {
    const events: StreamEvent[] = [runHeader()];
    for (let i = 0; i < ACTIVITY_CAP + 40; i++) {
      events.push(lifecycle("svc-gas", "stop", "Stopped", i));
    }
    expect(reduceAll(events).activity.length).toBe(ACTIVITY_CAP);
  });

  it("resolves pending commands on ack and surfaces failures", () => {
    const mid = reduceAll([...baseStream(), command("stop", "c1", 600)]);
    expect(mid.pending.get("c1")).toEqual({
      deviceId: "dev-1",
      serviceId: "svc-gas",
      action: "stop",
      tS: 600,
    });

    const okState = reduceAll([...baseStream(), command("stop", "c1", 600), ack("c1", true, 900)]);
    expect(okState.pending.size).toBe(0);

    const failState = reduceAll([
      ...baseStream(),
      command("stop", "c1", 600),
      ack("c1", false, 900, "service not running"),
    ]);
    expect(failState.pending.size).toBe(0);
    const last = failState.activity[failState.activity.length - 1]!;
    expect(last.level).toBe("error");
    expect(last.text).toContain("service not running");
  });

  it("accumulates running energy averages per variant", () => {
    const state = reduceAll([
      runHeader(),
      energyWindow("live", 0, 100, 2.0),
      energyWindow("baseline", 0, 100, 3.0),
      energyWindow("live", 100, 300, 4.0),
      energyWindow("baseline", 100, 300, 5.0),
    ]);
    const energy = state.devices.get("dev-1")!.energy;
    // (2*100 + 4*200) / 300 and (3*100 + 5*200) / 300
    expect(runningAverage(energy.live)).toBeCloseTo(1000 / 300, 12);
    expect(runningAverage(energy.baseline)).toBeCloseTo(1300 / 300, 12);
    expect(energy.windows).toEqual([
      { startS: 0, endS: 100, live: 2.0, baseline: 3.0 },
      { startS: 100, endS: 300, live: 4.0, baseline: 5.0 },
    ]);
  });

  it("returns null averages before any window arrives", () => {
    const state = reduceAll([runHeader()]);
    expect(runningAverage(state.devices.get("dev-1")!.energy.live)).toBeNull();
  });

  it("marks the run complete and tracks the clock", () => {
    const state = reduceAll([...baseStream(), { type: "run_end", t_s: 4500 } as StreamEvent]);
    expect(state.runComplete).toBe(true);
    expect(state.nowS).toBe(4500);
  });

  it("counts events even when they change nothing visible", () => {
    const state = initialState();
    reduce(state, { type: "eval", device_id: "dev-9", t_s: 10 });
    expect(state.eventCount).toBe(1);
    expect(state.devices.has("dev-9")).toBe(true);
  });
});
