// Thin client for the prediction service. The UI renders these responses
// verbatim; no prediction logic lives on this side of the wire.

export type TargetType = "image" | "text" | "link" | "button" | "input_field";

export const TARGET_TYPES: TargetType[] = [
  "image",
  "text",
  "link",
  "button",
  "input_field",
];

export interface PredictRequest {
  screenshot: string;
  bbox: [number, number, number, number];
  target_type: TargetType;
  n_candidates: number;
}

export interface PredictResponse {
  normalized: number;
  seconds: number;
  class_probs: number[];
  attention: number[];
  grid: number;
}

export interface WhatIfRequest extends PredictRequest {
  grid: { rows: number; cols: number };
}

export interface WhatIfResponse {
  rows: number;
  cols: number;
  x_positions: number[];
  y_positions: number[];
  seconds: number[][];
}

export interface HealthResponse {
  status: "ok" | "no_model";
  model_version: string | null;
}

/** Error carrying the service's field-level message, for inline display. */
export class ApiError extends Error {
  constructor(
    public status: number,
    public field: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

async function post<T>(url: string, body: unknown, signal?: AbortSignal): Promise<T> {
  const res = await fetch(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
    signal,
  });
  if (!res.ok) {
    let field = "request";
    let message = `service returned ${res.status}`;
    try {
      const data = await res.json();
      if (data && data.error) {
        field = data.error.field ?? field;
        message = data.error.message ?? message;
      }
    } catch {
      // non-JSON error body, keep the status message
    }
    throw new ApiError(res.status, field, message);
  }
  return res.json() as Promise<T>;
}

export function predict(
  base: string,
  req: PredictRequest,
  signal?: AbortSignal,
): Promise<PredictResponse> {
  return post<PredictResponse>(base + "/predict", req, signal);
}

export function whatif(
  base: string,
  req: WhatIfRequest,
  signal?: AbortSignal,
): Promise<WhatIfResponse> {
  return post<WhatIfResponse>(base + "/whatif", req, signal);
}

export async function health(base: string): Promise<HealthResponse> {
  const res = await fetch(base + "/health");
  return res.json();
}

/**
 * Keeps at most one request in flight; starting a new one aborts the
 * previous. Aborted calls resolve to null so stale responses never reach
 * the caller.
 */
export function latestWins<A extends unknown[], T>(
  fn: (signal: AbortSignal, ...args: A) => Promise<T>,
): (...args: A) => Promise<T | null> {
  let controller: AbortController | null = null;
  return async (...args: A) => {
    controller?.abort();
    const own = new AbortController();
    controller = own;
    try {
      const result = await fn(own.signal, ...args);
      return own.signal.aborted ? null : result;
    } catch (err) {
      if (own.signal.aborted) return null;
      throw err;
    }
  };
}
