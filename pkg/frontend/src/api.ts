/** Thin client for the posematch inference service.
 *
 * fetch is injectable so tests can run against a scripted transport.
 */

import type {
  ApiError,
  Prediction,
  SessionInfo,
  SupportRegistration,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class ApiRequestError extends Error {
  constructor(
    public status: number,
    public code: string,
    detail: string,
  ) {
    super(detail);
  }
}

async function unwrap<T>(response: {
  status: number;
  json(): Promise<unknown>;
}): Promise<T> {
  const body = (await response.json()) as T | ApiError;
  if (response.status >= 400) {
    const err = body as ApiError;
    throw new ApiRequestError(
      response.status,
      err.error ?? "unknown",
      err.detail ?? `request failed with ${response.status}`,
    );
  }
  return body as T;
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    }).then((r) => unwrap<T>(r));
  }

  health(): Promise<{ status: string; model_id: string }> {
    return this.fetchFn(`${this.baseUrl}/api/health`).then((r) => unwrap(r));
  }

  registerSupport(registration: SupportRegistration): Promise<SessionInfo> {
    return this.post("/api/support", registration);
  }

  async predict(sessionId: string, imageBase64: string): Promise<Prediction> {
    // the wire format is [x, y, confidence] triples
    const raw = await this.post<{
      keypoints: [number, number, number][];
      model_id: string;
      timing_ms: number;
    }>("/api/predict", { session_id: sessionId, image: imageBase64 });
    return {
      keypoints: raw.keypoints.map(([x, y, confidence]) => ({
        x,
        y,
        confidence,
      })),
      model_id: raw.model_id,
      timing_ms: raw.timing_ms,
    };
  }
}
