// Pure HTML builders. Every panel is a function of the reduced state (plus
// UI-only bits like the current selection), so tests can assert on exact
// markup without a DOM. No builder here performs I/O or mutates anything.

import { escapeHtml, fmtCurrent, fmtSimTime, fmtValue } from "./format.js";
import type {
  ActivityEntry,
  AppState,
  DeviceView,
  SeriesPoint,
  ServiceView,
} from "./state.js";
import { runningAverage } from "./state.js";
import type { Lifecycle, ServiceDetailResponse } from "./types.js";

export interface Selection {
  deviceId: string;
  serviceId: string;
}

export interface FormDraft {
  version: string | null;
  descriptor: string | null;
}

export interface UiState {
  selection: Selection | null;
  /** Latest /api/devices/{dev}/services/{svc} body for the selection. */
  detail: ServiceDetailResponse | null;
  form: FormDraft;
  /** Local-only problems (rejected POSTs, bad JSON in the form). */
  notices: { seq: number; level: "warn" | "error"; text: string }[];
}

// Which actions the control plane accepts from each lifecycle state. Buttons
// outside this table render disabled, so a click can never produce a request
// the server is guaranteed to refuse.
const LEGAL_ACTIONS: Record<Lifecycle, readonly string[]> = {
  Installed: ["start", "uninstall", "update"],
  Running: ["stop", "update"],
  Stopped: ["start", "uninstall", "update"],
  Uninstalled: [],
};

export const ACTION_ORDER = ["start", "stop", "uninstall", "update"] as const;

export function legalActions(
  lifecycle: Lifecycle | null,
  runComplete: boolean,
): ReadonlySet<string> {
  if (lifecycle === null || runComplete) {
    return new Set();
  }
  return new Set(LEGAL_ACTIONS[lifecycle]);
}

function lifecycleBadge(lifecycle: Lifecycle | null): string {
  if (lifecycle === null) {
    return '<span class="badge badge-unknown">-</span>';
  }
  return `<span class="badge lc-${lifecycle.toLowerCase()}">${lifecycle}</span>`;
}

// Health only means something while the service reports; for stopped or
// uninstalled services the monitor holds no current claim, so no badge.
function healthBadge(service: ServiceView): string {
  if (service.lifecycle !== "Running") {
    return "";
  }
  const cls = service.health.state === "Suspicious" ? "hl-suspicious" : "hl-normal";
  const reason = escapeHtml(service.health.reason);
  return `<span class="badge ${cls}" title="${reason}">${service.health.state}</span>`;
}

// ---- fleet table ------------------------------------------------------------

export function fleetTable(state: AppState, selection: Selection | null): string {
  if (state.devices.size === 0) {
    return '<h2>Fleet</h2><p class="empty">No devices yet. Waiting for the event stream.</p>';
  }
  const rows: string[] = [];
  for (const device of state.devices.values()) {
    for (const service of device.services.values()) {
      const isSelected =
        selection !== null &&
        selection.deviceId === device.deviceId &&
        selection.serviceId === service.serviceId;
      const dev = escapeHtml(device.deviceId);
      const svc = escapeHtml(service.serviceId);
      rows.push(
        `<tr class="${isSelected ? "selected" : ""}" data-nav="service" data-device="${dev}" data-service="${svc}">` +
          `<td>${dev}</td>` +
          `<td>${svc}</td>` +
          `<td>${lifecycleBadge(service.lifecycle)}</td>` +
          `<td>${healthBadge(service)}</td>` +
          `<td class="num">${fmtValue(service.lastValue)}</td>` +
          `<td class="num">${fmtSimTime(service.lastSeenS)}</td>` +
          `<td class="num">v${service.codeVersion ?? "?"}</td>` +
          "</tr>",
      );
    }
  }
  return (
    "<h2>Fleet</h2>" +
    '<table class="fleet">' +
    "<thead><tr><th>Device</th><th>Service</th><th>Lifecycle</th><th>Health</th>" +
    "<th>Last value</th><th>Last seen</th><th>Version</th></tr></thead>" +
    `<tbody>${rows.join("")}</tbody></table>`
  );
}

// ---- service detail ----------------------------------------------------------

export function sparkline(series: SeriesPoint[], width = 360, height = 80): string {
  if (series.length < 2) {
    return '<p class="empty">Not enough samples for a chart yet.</p>';
  }
  const t0 = series[0]!.tS;
  const t1 = series[series.length - 1]!.tS;
  let lo = Infinity;
  let hi = -Infinity;
  for (const point of series) {
    lo = Math.min(lo, point.value);
    hi = Math.max(hi, point.value);
  }
  if (hi === lo) {
    hi += 0.5;
    lo -= 0.5;
  }
  const pad = 4;
  const x = (tS: number) =>
    t1 === t0 ? pad : pad + ((tS - t0) / (t1 - t0)) * (width - 2 * pad);
  const y = (value: number) => pad + ((hi - value) / (hi - lo)) * (height - 2 * pad);
  const points = series
    .map((p) => `${x(p.tS).toFixed(1)},${y(p.value).toFixed(1)}`)
    .join(" ");
  const markers = series
    .filter((p) => p.flagged)
    .map(
      (p) =>
        `<circle class="flag" cx="${x(p.tS).toFixed(1)}" cy="${y(p.value).toFixed(1)}" r="3"/>`,
    )
    .join("");
  return (
    `<svg class="spark" viewBox="0 0 ${width} ${height}" role="img">` +
    `<polyline points="${points}"/>${markers}</svg>`
  );
}

function actionButtons(state: AppState, service: ServiceView, selection: Selection): string {
  const legal = legalActions(service.lifecycle, state.runComplete);
  const dev = escapeHtml(selection.deviceId);
  const svc = escapeHtml(selection.serviceId);
  const buttons = ACTION_ORDER.map((action) => {
    const disabled = legal.has(action) ? "" : " disabled";
    return (
      `<button type="button" data-act="${action}" data-device="${dev}" data-service="${svc}"${disabled}>` +
      `${action}</button>`
    );
  });
  return `<div class="actions">${buttons.join("")}</div>`;
}

function updateForm(service: ServiceView, ui: UiState): string {
  const nextVersion = (service.codeVersion ?? 0) + 1;
  const version = ui.form.version ?? String(nextVersion);
  const descriptor = ui.form.descriptor ?? descriptorSkeleton(service);
  return (
    '<details class="update-form"><summary>update payload</summary>' +
    `<label>new code version <input id="version-field" type="number" min="0" value="${escapeHtml(version)}"></label>` +
    `<label>descriptor <textarea id="descriptor-field" rows="10" spellcheck="false">${escapeHtml(descriptor)}</textarea></label>` +
    "<p class=\"hint\">update posts this descriptor with the version above; the server validates it.</p>" +
    "</details>"
  );
}

/** Editable starting point for an update request. The API does not expose the
 * running sensor config, so the operator fills in what should change. */
export function descriptorSkeleton(service: ServiceView): string {
  return JSON.stringify(
    {
      service_id: service.serviceId,
      code_version: (service.codeVersion ?? 0) + 1,
      report_interval_s: service.intervalS ?? 600,
      sensor: {
        kind: "generic",
        baseline: 0.0,
        diurnal_amplitude: 0.0,
        noise_sigma: 0.1,
        unit: "unit",
      },
      energy_cost: { sample_current_mA: 1.0, sample_duration_s: 0.1 },
    },
    null,
    2,
  );
}

function transitionsList(service: ServiceView): string {
  if (service.transitions.length === 0) {
    return '<p class="empty">No health transitions yet.</p>';
  }
  const items = service.transitions
    .slice(-10)
    .reverse()
    .map(
      (t) =>
        `<li><span class="t">${fmtSimTime(t.tS)}</span> ` +
        `<span class="${t.state === "Suspicious" ? "hl-suspicious" : "hl-normal"} badge">${t.state}</span> ` +
        `${escapeHtml(t.reason)}</li>`,
    );
  return `<ul class="transitions">${items.join("")}</ul>`;
}

function verdictsTable(detail: ServiceDetailResponse | null): string {
  if (detail === null || detail.verdicts.length === 0) {
    return "";
  }
  const rows = detail.verdicts
    .slice(-8)
    .reverse()
    .map(
      (v) =>
        `<tr><td>${fmtSimTime(v.evaluated_at_s)}</td>` +
        `<td>${v.available ? "yes" : "no"}</td>` +
        `<td>${v.correct ? "yes" : "no"}</td>` +
        `<td>${escapeHtml(v.reason)}</td></tr>`,
    );
  return (
    "<h3>Recent verdicts</h3><table class=\"verdicts\">" +
    "<thead><tr><th>At</th><th>Available</th><th>Correct</th><th>Reason</th></tr></thead>" +
    `<tbody>${rows.join("")}</tbody></table>`
  );
}

function energyContribution(detail: ServiceDetailResponse | null): string {
  if (detail === null || detail.energy === undefined) {
    return "";
  }
  const { attributed_mA_s, device_total_mA_s } = detail.energy;
  const share =
    device_total_mA_s > 0 ? ((attributed_mA_s / device_total_mA_s) * 100).toFixed(1) : "0.0";
  return (
    '<p class="energy-share">energy attributed to this service: ' +
    `${attributed_mA_s.toFixed(3)} mA·s of ${device_total_mA_s.toFixed(3)} mA·s (${share}%)</p>`
  );
}

export function serviceDetail(state: AppState, ui: UiState): string {
  if (ui.selection === null) {
    return '<h2>Service</h2><p class="empty">Select a service in the fleet table.</p>';
  }
  const device = state.devices.get(ui.selection.deviceId);
  const service = device?.services.get(ui.selection.serviceId);
  if (device === undefined || service === undefined) {
    return '<h2>Service</h2><p class="empty">Unknown service.</p>';
  }
  const title = `${escapeHtml(device.deviceId)} / ${escapeHtml(service.serviceId)}`;
  return (
    `<h2>Service ${title}</h2>` +
    `<p class="badges">${lifecycleBadge(service.lifecycle)} ${healthBadge(service)}` +
    ` <span class="muted">v${service.codeVersion ?? "?"} · every ${service.intervalS ?? "?"}s</span></p>` +
    actionButtons(state, service, ui.selection) +
    updateForm(service, ui) +
    "<h3>Values</h3>" +
    sparkline(service.series) +
    energyContribution(ui.detail) +
    "<h3>Health transitions</h3>" +
    transitionsList(service) +
    verdictsTable(ui.detail)
  );
}

// ---- energy panel -------------------------------------------------------------

function energyBars(device: DeviceView, width = 360, height = 60): string {
  const pairs = device.energy.windows.slice(-12);
  const complete = pairs.filter((p) => p.live !== null && p.baseline !== null);
  if (complete.length === 0) {
    return "";
  }
  let hi = 0;
  for (const p of complete) {
    hi = Math.max(hi, p.live ?? 0, p.baseline ?? 0);
  }
  if (hi <= 0) {
    hi = 1;
  }
  const slot = width / complete.length;
  const bar = slot * 0.35;
  const rects = complete
    .map((p, i) => {
      const hLive = ((p.live ?? 0) / hi) * (height - 2);
      const hBase = ((p.baseline ?? 0) / hi) * (height - 2);
      const x0 = i * slot + slot * 0.1;
      return (
        `<rect class="baseline" x="${(x0).toFixed(1)}" y="${(height - hBase).toFixed(1)}" width="${bar.toFixed(1)}" height="${hBase.toFixed(1)}"/>` +
        `<rect class="live" x="${(x0 + bar).toFixed(1)}" y="${(height - hLive).toFixed(1)}" width="${bar.toFixed(1)}" height="${hLive.toFixed(1)}"/>`
      );
    })
    .join("");
  return `<svg class="bars" viewBox="0 0 ${width} ${height}" role="img">${rects}</svg>`;
}

export function energyPanel(state: AppState): string {
  if (state.devices.size === 0) {
    return '<h2>Energy</h2><p class="empty">No energy windows yet.</p>';
  }
  const blocks: string[] = [];
  for (const device of state.devices.values()) {
    const live = runningAverage(device.energy.live);
    const baseline = runningAverage(device.energy.baseline);
    if (live === null && baseline === null) {
      continue;
    }
    const saved = live !== null && baseline !== null ? baseline - live : null;
    blocks.push(
      `<div class="energy-device" data-energy-device="${escapeHtml(device.deviceId)}">` +
        `<h3>${escapeHtml(device.deviceId)}</h3>` +
        '<dl class="energy-avg">' +
        `<dt>managed</dt><dd data-field="live">${live === null ? "-" : fmtCurrent(live)}</dd>` +
        `<dt>baseline</dt><dd data-field="baseline">${baseline === null ? "-" : fmtCurrent(baseline)}</dd>` +
        `<dt>saved</dt><dd data-field="saved">${saved === null ? "-" : fmtCurrent(saved)}</dd>` +
        "</dl>" +
        energyBars(device) +
        "</div>",
    );
  }
  if (blocks.length === 0) {
    return '<h2>Energy</h2><p class="empty">No energy windows yet.</p>';
  }
  return `<h2>Energy <span class="muted">running averages</span></h2>${blocks.join("")}`;
}

// ---- activity feed --------------------------------------------------------------

export function activityFeed(state: AppState, ui: UiState): string {
  const entries: { key: number; level: string; tS: number | null; text: string }[] = [];
  for (const entry of state.activity as ActivityEntry[]) {
    entries.push({ key: entry.seq, level: entry.level, tS: entry.tS, text: entry.text });
  }
  for (const notice of ui.notices) {
    entries.push({ key: notice.seq, level: notice.level, tS: null, text: notice.text });
  }
  entries.sort((a, b) => a.key - b.key);
  const items = entries
    .slice(-25)
    .reverse()
    .map(
      (e) =>
        `<li class="lv-${e.level}"><span class="t">${e.tS === null ? "local" : fmtSimTime(e.tS)}</span> ` +
        `${escapeHtml(e.text)}</li>`,
    );
  if (items.length === 0) {
    return '<h2>Activity</h2><p class="empty">Nothing yet.</p>';
  }
  return `<h2>Activity</h2><ul class="feed">${items.join("")}</ul>`;
}

// ---- header strip ----------------------------------------------------------------

export function headerStrip(state: AppState): string {
  const bits: string[] = [];
  if (state.meta.policy !== null) {
    bits.push(`policy ${escapeHtml(state.meta.policy)}`);
    bits.push(`seed ${state.meta.seed}`);
    bits.push(`${state.meta.speedup}x`);
  }
  if (state.nowS !== null) {
    bits.push(`t=${fmtSimTime(state.nowS)}`);
  }
  bits.push(state.runComplete ? "run complete" : "live");
  return bits.join(" · ");
}
