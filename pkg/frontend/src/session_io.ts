// Session export and import.
//
// The document reuses the episode-dump field names (query_text, label,
// support_texts, k) so a saved session can be eyeballed next to training
// artifacts without a mental translation step.

import type { HistoryEntry, LabelEntry, SessionState } from "./state.js";

export interface SessionDocument {
  version: 1;
  query_text: string;
  labels: Array<{ label: string; support_texts: string[]; k: number }>;
  last_scores: Record<string, number> | null;
  top: string | null;
  stale: boolean;
  history: Array<{
    query_text: string;
    scores: Record<string, number>;
    top: string;
    timestamp: string;
  }>;
}

export function exportSession(state: SessionState): string {
  const doc: SessionDocument = {
    version: 1,
    query_text: state.query,
    labels: state.labels.map((l) => ({
      label: l.name,
      support_texts: l.supports.slice(),
      k: l.supports.length,
    })),
    last_scores: state.lastScores ? { ...state.lastScores } : null,
    top: state.top,
    stale: state.stale,
    history: state.history.map((h) => ({
      query_text: h.query_text,
      scores: { ...h.scores },
      top: h.top,
      timestamp: h.timestamp,
    })),
  };
  return JSON.stringify(doc, null, 2);
}

function fail(msg: string): never {
  throw new Error(`session import: ${msg}`);
}

function requireString(v: unknown, what: string): string {
  if (typeof v !== "string") fail(`${what} must be a string`);
  return v;
}

function requireScores(v: unknown, what: string): Record<string, number> {
  if (typeof v !== "object" || v === null || Array.isArray(v)) {
    fail(`${what} must be an object of numbers`);
  }
  const out: Record<string, number> = {};
  for (const [key, val] of Object.entries(v as Record<string, unknown>)) {
    if (typeof val !== "number" || !Number.isFinite(val)) {
      fail(`${what}[${JSON.stringify(key)}] must be a finite number`);
    }
    out[key] = val;
  }
  return out;
}

export function importSession(json: string): SessionState {
  let raw: unknown;
  try {
    raw = JSON.parse(json);
  } catch {
    fail("not valid JSON");
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    fail("document must be a JSON object");
  }
  const doc = raw as Partial<SessionDocument>;
  if (doc.version !== 1) {
    fail(`unsupported version ${JSON.stringify(doc.version)}`);
  }
  const query = requireString(doc.query_text ?? "", "query_text");
  if (!Array.isArray(doc.labels)) {
    fail("labels must be an array");
  }

  const labels: LabelEntry[] = [];
  const seen = new Set<string>();
  for (const item of doc.labels) {
    if (typeof item !== "object" || item === null) {
      fail("each label entry must be an object");
    }
    const name = requireString((item as { label?: unknown }).label, "label");
    if (name.trim() === "") fail("label names must be non-blank");
    if (seen.has(name)) fail(`duplicate label ${JSON.stringify(name)}`);
    seen.add(name);
    const texts = (item as { support_texts?: unknown }).support_texts;
    if (!Array.isArray(texts) || texts.some((t) => typeof t !== "string")) {
      fail(`support_texts for ${JSON.stringify(name)} must be an array of strings`);
    }
    const k = (item as { k?: unknown }).k;
    if (k !== undefined && k !== texts.length) {
      fail(`k=${String(k)} disagrees with ${texts.length} supports for ${JSON.stringify(name)}`);
    }
    labels.push({ name, supports: (texts as string[]).slice() });
  }

  const history: HistoryEntry[] = [];
  const rawHistory = doc.history ?? [];
  if (!Array.isArray(rawHistory)) fail("history must be an array");
  for (const item of rawHistory) {
    if (typeof item !== "object" || item === null) {
      fail("each history entry must be an object");
    }
    const h = item as Record<string, unknown>;
    history.push(
      Object.freeze({
        query_text: requireString(h["query_text"], "history query_text"),
        scores: Object.freeze(requireScores(h["scores"], "history scores")) as Record<string, number>,
        top: requireString(h["top"], "history top"),
        timestamp: requireString(h["timestamp"], "history timestamp"),
      }),
    );
  }

  const lastScores =
    doc.last_scores === null || doc.last_scores === undefined
      ? null
      : requireScores(doc.last_scores, "last_scores");
  const top = doc.top === null || doc.top === undefined ? null : requireString(doc.top, "top");

  return {
    labels,
    query,
    lastScores,
    top,
    stale: doc.stale === true,
    history: Object.freeze(history),
  };
}
