// Session state and the pure transitions the playground UI drives.
//
// Every transition returns a fresh state object; callers never mutate in
// place. History entries are frozen on append so a stored result can never
// drift from what the service actually returned.

export interface LabelEntry {
  name: string;
  supports: string[];
}

export interface HistoryEntry {
  query_text: string;
  scores: Record<string, number>;
  top: string;
  timestamp: string;
}

export interface SessionState {
  labels: LabelEntry[];
  query: string;
  lastScores: Record<string, number> | null;
  top: string | null;
  /** True when labels or supports changed after the last applied result. */
  stale: boolean;
  history: readonly HistoryEntry[];
}

export type SupportOp = "add" | "remove" | "edit";

export interface EditResult {
  state: SessionState;
  /** Set when the edit went through but deserves a nudge (duplicates). */
  warning?: string;
}

export function newSession(): SessionState {
  return {
    labels: [],
    query: "",
    lastScores: null,
    top: null,
    stale: false,
    history: [],
  };
}

function findLabel(state: SessionState, name: string): number {
  return state.labels.findIndex((l) => l.name === name);
}

// results on screen become stale the moment the episode inputs change
function touch(state: SessionState): Pick<SessionState, "stale"> {
  return { stale: state.lastScores !== null };
}

export function addLabel(state: SessionState, name: string): SessionState {
  if (name.trim() === "") {
    throw new Error("label name must not be blank");
  }
  if (findLabel(state, name) !== -1) {
    throw new Error(`label ${JSON.stringify(name)} already exists`);
  }
  return {
    ...state,
    labels: [...state.labels, { name, supports: [] }],
    ...touch(state),
  };
}

export function removeLabel(state: SessionState, name: string): SessionState {
  const idx = findLabel(state, name);
  if (idx === -1) {
    throw new Error(`no label named ${JSON.stringify(name)}`);
  }
  const labels = state.labels.filter((_, i) => i !== idx);
  return { ...state, labels, ...touch(state) };
}

export function setQuery(state: SessionState, query: string): SessionState {
  // the query is part of the request, not of the support sets, so changing
  // it does not mark existing scores stale; it simply enables a new submit
  return { ...state, query };
}

/**
 * Apply one support-list edit to a label.
 *
 * add:    value is the new support text, appended at the end
 * remove: value is an existing support text; first occurrence is dropped
 * edit:   value is {index, text}; replaces the support at index
 *
 * Duplicate supports are allowed (they genuinely change K) but reported
 * through the warning channel so the UI can flag them.
 */
export function editSupport(
  state: SessionState,
  label: string,
  op: SupportOp,
  value: string | { index: number; text: string },
): EditResult {
  const idx = findLabel(state, label);
  if (idx === -1) {
    throw new Error(`no label named ${JSON.stringify(label)}`);
  }
  const entry = state.labels[idx]!;
  let supports: string[];
  let warning: string | undefined;

  if (op === "add") {
    if (typeof value !== "string") {
      throw new Error("add expects the support text");
    }
    if (entry.supports.includes(value)) {
      warning = `duplicate support for ${JSON.stringify(label)}`;
    }
    supports = [...entry.supports, value];
  } else if (op === "remove") {
    if (typeof value !== "string") {
      throw new Error("remove expects the support text");
    }
    const at = entry.supports.indexOf(value);
    if (at === -1) {
      throw new Error(`support not found under ${JSON.stringify(label)}`);
    }
    supports = entry.supports.filter((_, i) => i !== at);
  } else if (op === "edit") {
    if (typeof value === "string") {
      throw new Error("edit expects {index, text}");
    }
    if (value.index < 0 || value.index >= entry.supports.length) {
      throw new Error(`support index ${value.index} out of range`);
    }
    supports = entry.supports.slice();
    supports[value.index] = value.text;
    if (
      entry.supports.includes(value.text) &&
      entry.supports[value.index] !== value.text
    ) {
      warning = `duplicate support for ${JSON.stringify(label)}`;
    }
  } else {
    throw new Error(`unknown support op ${JSON.stringify(op)}`);
  }

  const labels = state.labels.slice();
  labels[idx] = { name: entry.name, supports };
  return { state: { ...state, labels, ...touch(state) }, warning };
}

/** K for a label is nothing but the length of its support list. */
export function kOf(state: SessionState, label: string): number {
  const idx = findLabel(state, label);
  if (idx === -1) {
    throw new Error(`no label named ${JSON.stringify(label)}`);
  }
  return state.labels[idx]!.supports.length;
}

/** Submit is possible once every label has a support and a query is typed. */
export function canSubmit(state: SessionState): boolean {
  return (
    state.labels.length > 0 &&
    state.labels.every((l) => l.supports.length > 0) &&
    state.query.trim() !== ""
  );
}

/** Shape the /classify request body for the current session. */
export function classifyPayload(state: SessionState): {
  labels: Record<string, string[]>;
  text: string;
} {
  const labels: Record<string, string[]> = {};
  for (const l of state.labels) {
    labels[l.name] = l.supports.slice();
  }
  return { labels, text: state.query };
}

/**
 * Record a classify result. Scores are stored exactly as parsed off the
 * wire; nothing in the UI may recompute or normalize them.
 */
export function applyScores(
  state: SessionState,
  queryText: string,
  scores: Record<string, number>,
  top: string,
  timestamp: string,
): SessionState {
  const entry: HistoryEntry = Object.freeze({
    query_text: queryText,
    scores: Object.freeze({ ...scores }) as Record<string, number>,
    top,
    timestamp,
  });
  return {
    ...state,
    lastScores: scores,
    top,
    stale: false,
    history: Object.freeze([...state.history, entry]),
  };
}
