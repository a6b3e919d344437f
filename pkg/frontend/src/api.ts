// Thin typed client for the management API. Failures carry the server's
// error body so the page can show the actual refusal, not a generic message.

import type {
  ActionAccepted,
  ActionRequest,
  FleetResponse,
  ServiceDetailResponse,
  SummaryResponse,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly reason: string | null;
  readonly details: string[];

  constructor(status: number, message: string, reason: string | null, details: string[]) {
    super(message);
    this.name = "ApiError";
    this.status = status;
    this.reason = reason;
    this.details = details;
  }
}

async function errorFrom(response: Response): Promise<ApiError> {
  let message = `HTTP ${response.status}`;
  let reason: string | null = null;
  let details: string[] = [];
  try {
    const body = (await response.json()) as {
      error?: string;
      reason?: string;
      details?: string[];
    };
    if (typeof body.error === "string") {
      message = body.error;
    }
    if (typeof body.reason === "string") {
      reason = body.reason;
    }
    if (Array.isArray(body.details)) {
      details = body.details.filter((d): d is string => typeof d === "string");
    }
  } catch {
    // non-JSON error body; keep the status line
  }
  return new ApiError(response.status, message, reason, details);
}

async function getJson<T>(base: string, path: string): Promise<T> {
  const response = await fetch(`${base}${path}`, {
    headers: { accept: "application/json" },
  });
  if (!response.ok) {
    throw await errorFrom(response);
  }
  return (await response.json()) as T;
}

export function getFleet(base = ""): Promise<FleetResponse> {
  return getJson(base, "/api/devices");
}

export function getServiceDetail(
  deviceId: string,
  serviceId: string,
  base = "",
): Promise<ServiceDetailResponse> {
  const dev = encodeURIComponent(deviceId);
  const svc = encodeURIComponent(serviceId);
  return getJson(base, `/api/devices/${dev}/services/${svc}`);
}

export function getSummary(base = ""): Promise<SummaryResponse> {
  return getJson(base, "/api/summary");
}

/**
 * Submit a lifecycle action. Resolves with the accepted command id; the
 * actual state change arrives later on the event stream. Rejections (including
 * 409 conflicts) reject with an ApiError for the caller to surface.
 */
export async function postAction(
  deviceId: string,
  serviceId: string,
  request: ActionRequest,
  base = "",
): Promise<ActionAccepted> {
  const dev = encodeURIComponent(deviceId);
  const svc = encodeURIComponent(serviceId);
  const response = await fetch(`${base}/api/devices/${dev}/services/${svc}/actions`, {
    method: "POST",
    headers: { "content-type": "application/json", accept: "application/json" },
    body: JSON.stringify(request),
  });
  if (!response.ok) {
    throw await errorFrom(response);
  }
  return (await response.json()) as ActionAccepted;
}
