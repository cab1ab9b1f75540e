// Minimal fetch client for the inference service, plus the submit
// controller that serializes classify calls and drops superseded replies.

import type { ClassifyResponse, ErrorResponse, HealthResponse } from "./types.js";
import type { SessionState } from "./state.js";
import { applyScores, classifyPayload } from "./state.js";

export const DEFAULT_BASE_URL = "http://127.0.0.1:8080";

/**
 * Resolve the service base URL. Precedence: explicit argument, then a
 * globalThis.EXNET_BASE_URL override (set by the page or a build wrapper),
 * then the default local address.
 */
export function resolveBaseUrl(explicit?: string): string {
  if (explicit !== undefined && explicit.trim() !== "") {
    return explicit.replace(/\/+$/, "");
  }
  const g = (globalThis as Record<string, unknown>)["EXNET_BASE_URL"];
  if (typeof g === "string" && g.trim() !== "") {
    return g.replace(/\/+$/, "");
  }
  return DEFAULT_BASE_URL;
}

export class ServiceRequestError extends Error {
  readonly field: string;
  readonly status: number;

  constructor(status: number, field: string, message: string) {
    super(message);
    this.name = "ServiceRequestError";
    this.status = status;
    this.field = field;
  }
}

async function parseError(status: number, raw: string): Promise<never> {
  let field = "body";
  let message = raw || `service returned status ${status}`;
  try {
    const doc = JSON.parse(raw) as ErrorResponse;
    if (doc && typeof doc.error === "object") {
      field = doc.error.field ?? field;
      message = doc.error.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the raw text as the message
  }
  throw new ServiceRequestError(status, field, message);
}

export class ExnetClient {
  readonly baseUrl: string;

  constructor(baseUrl?: string) {
    this.baseUrl = resolveBaseUrl(baseUrl);
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    const text = await resp.text();
    if (!resp.ok) {
      await parseError(resp.status, text);
    }
    return JSON.parse(text) as T;
  }

  classify(labels: Record<string, string[]>, text: string): Promise<ClassifyResponse> {
    return this.post<ClassifyResponse>("/classify", { labels, text });
  }

  async health(): Promise<HealthResponse> {
    const resp = await fetch(`${this.baseUrl}/health`);
    const text = await resp.text();
    if (!resp.ok && resp.status !== 503) {
      await parseError(resp.status, text);
    }
    return JSON.parse(text) as HealthResponse;
  }
}

export interface SubmitOutcome {
  state: SessionState;
  /** True when a newer submit superseded this one and its reply was dropped. */
  discarded: boolean;
}

/**
 * Serializes classify submissions for one session.
 *
 * Each submit takes a sequence number; a reply is applied only if no newer
 * submit started while it was in flight. The busy flag lets the UI keep at
 * most one request outstanding, but even if callers race, stale replies can
 * never overwrite newer ones.
 */
export class SubmitController {
  private seq = 0;
  private inflight = 0;

  get busy(): boolean {
    return this.inflight > 0;
  }

  async submit(state: SessionState, client: ExnetClient): Promise<SubmitOutcome> {
    const mySeq = ++this.seq;
    const { labels, text } = classifyPayload(state);
    this.inflight += 1;
    try {
      const resp = await client.classify(labels, text);
      if (mySeq !== this.seq) {
        return { state, discarded: true };
      }
      const next = applyScores(state, text, resp.scores, resp.top, new Date().toISOString());
      return { state: next, discarded: false };
    } finally {
      this.inflight -= 1;
    }
  }
}
