// Page wiring. One stream drives one reducer drives one render pass; clicks
// only ever turn into HTTP requests, and the screen changes when the server's
// events come back. No handler writes to the reduced state.

import { ApiError, getServiceDetail, postAction } from "./api.js";
import {
  activityFeed,
  energyPanel,
  fleetTable,
  headerStrip,
  serviceDetail,
  type UiState,
} from "./render.js";
import { initialState, reduce } from "./state.js";
import { streamFrames } from "./sse.js";
import type { StreamEvent } from "./types.js";

const state = initialState();
const ui: UiState = { selection: null, detail: null, form: { version: null, descriptor: null }, notices: [] };

const panels = {
  meta: document.getElementById("meta")!,
  fleet: document.getElementById("fleet")!,
  detail: document.getElementById("detail")!,
  energy: document.getElementById("energy")!,
  feed: document.getElementById("feed")!,
};

// ---- single render loop ------------------------------------------------------

let renderQueued = false;

function scheduleRender(): void {
  if (renderQueued) {
    return;
  }
  renderQueued = true;
  requestAnimationFrame(() => {
    renderQueued = false;
    renderAll();
  });
}

function renderAll(): void {
  panels.meta.textContent = headerStrip(state);
  panels.fleet.innerHTML = fleetTable(state, ui.selection);
  panels.energy.innerHTML = energyPanel(state);
  panels.feed.innerHTML = activityFeed(state, ui);
  renderDetailPreservingFocus();
}

// innerHTML replacement would eat the caret while typing in the update form,
// so capture and restore focus around the swap.
function renderDetailPreservingFocus(): void {
  const active = document.activeElement;
  const focusId = active instanceof HTMLElement && panels.detail.contains(active) ? active.id : null;
  let caret: [number, number] | null = null;
  if (
    (active instanceof HTMLInputElement || active instanceof HTMLTextAreaElement) &&
    active.selectionStart !== null &&
    active.selectionEnd !== null
  ) {
    caret = [active.selectionStart, active.selectionEnd];
  }
  panels.detail.innerHTML = serviceDetail(state, ui);
  if (focusId) {
    const restored = document.getElementById(focusId);
    if (restored instanceof HTMLElement) {
      restored.focus();
      if (
        caret !== null &&
        (restored instanceof HTMLInputElement || restored instanceof HTMLTextAreaElement)
      ) {
        restored.setSelectionRange(caret[0], caret[1]);
      }
    }
  }
}

// ---- notices -------------------------------------------------------------------

function notice(level: "warn" | "error", text: string): void {
  // seq interleaves local notices with stream entries in arrival order
  ui.notices.push({ seq: state.eventCount, level, text });
  if (ui.notices.length > 50) {
    ui.notices.splice(0, ui.notices.length - 50);
  }
  scheduleRender();
}

// ---- selection + detail fetches ---------------------------------------------------

let detailFetchSeq = 0;

function refreshDetail(): void {
  if (ui.selection === null) {
    ui.detail = null;
    return;
  }
  const { deviceId, serviceId } = ui.selection;
  const seq = ++detailFetchSeq;
  getServiceDetail(deviceId, serviceId)
    .then((detail) => {
      // Stale responses must not clobber a newer selection.
      if (seq === detailFetchSeq && ui.selection?.deviceId === deviceId && ui.selection?.serviceId === serviceId) {
        ui.detail = detail;
        scheduleRender();
      }
    })
    .catch((error: unknown) => {
      if (seq === detailFetchSeq) {
        notice("warn", `detail fetch failed: ${error instanceof Error ? error.message : String(error)}`);
      }
    });
}

function select(deviceId: string, serviceId: string): void {
  ui.selection = { deviceId, serviceId };
  ui.detail = null;
  ui.form = { version: null, descriptor: null };
  refreshDetail();
  scheduleRender();
}

function touchesSelection(event: StreamEvent): boolean {
  if (ui.selection === null) {
    return false;
  }
  if (!("device_id" in event) || event.device_id !== ui.selection.deviceId) {
    return false;
  }
  if ("service_id" in event) {
    return event.service_id === ui.selection.serviceId;
  }
  return event.type === "eval";
}

// ---- actions ----------------------------------------------------------------------

function submit(action: string, deviceId: string, serviceId: string): void {
  let body: { action: string; descriptor?: unknown } = { action };
  if (action === "update") {
    const versionField = document.getElementById("version-field") as HTMLInputElement | null;
    const descriptorField = document.getElementById("descriptor-field") as HTMLTextAreaElement | null;
    let descriptor: Record<string, unknown>;
    try {
      descriptor = JSON.parse(descriptorField?.value ?? "") as Record<string, unknown>;
    } catch {
      notice("error", "update descriptor is not valid JSON");
      return;
    }
    const version = Number(versionField?.value);
    if (Number.isFinite(version)) {
      descriptor["code_version"] = version;
    }
    body = { action, descriptor };
  }
  postAction(deviceId, serviceId, body)
    .then((accepted) => {
      notice("warn", `request ${accepted.command_id} accepted: ${action} ${deviceId}/${serviceId}`);
    })
    .catch((error: unknown) => {
      if (error instanceof ApiError) {
        const extra = error.details.length > 0 ? ` (${error.details.join("; ")})` : "";
        notice("error", `${action} ${deviceId}/${serviceId} rejected [${error.status}]: ${error.message}${extra}`);
      } else {
        notice("error", `${action} ${deviceId}/${serviceId} failed: ${error instanceof Error ? error.message : String(error)}`);
      }
    });
}

// ---- event wiring -----------------------------------------------------------------

document.addEventListener("click", (domEvent) => {
  const target = domEvent.target;
  if (!(target instanceof Element)) {
    return;
  }
  const button = target.closest<HTMLButtonElement>("button[data-act]");
  if (button !== null) {
    if (!button.disabled) {
      submit(button.dataset["act"]!, button.dataset["device"]!, button.dataset["service"]!);
    }
    return;
  }
  const row = target.closest<HTMLTableRowElement>("tr[data-nav='service']");
  if (row !== null) {
    select(row.dataset["device"]!, row.dataset["service"]!);
  }
});

document.addEventListener("input", (domEvent) => {
  const target = domEvent.target;
  if (target instanceof HTMLInputElement && target.id === "version-field") {
    ui.form.version = target.value;
  } else if (target instanceof HTMLTextAreaElement && target.id === "descriptor-field") {
    ui.form.descriptor = target.value;
  }
});

// ---- stream ------------------------------------------------------------------------

async function consumeStream(): Promise<void> {
  try {
    await streamFrames("/api/stream", (frame) => {
      let event: StreamEvent;
      try {
        event = JSON.parse(frame.data) as StreamEvent;
      } catch {
        return; // not JSON, nothing to apply
      }
      reduce(state, event);
      if (touchesSelection(event) && (event.type === "state_change" || event.type === "lifecycle" || event.type === "eval")) {
        refreshDetail();
      }
      scheduleRender();
    });
    notice("warn", "event stream closed");
  } catch (error: unknown) {
    notice("error", `event stream error: ${error instanceof Error ? error.message : String(error)}`);
  }
}

renderAll();
void consumeStream();
