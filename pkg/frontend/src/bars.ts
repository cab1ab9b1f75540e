// HTML-string renderers. Returning plain strings keeps this layer testable
// without a DOM and keeps main.ts down to innerHTML assignments.

import type { HistoryEntry, SessionState } from "./state.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/**
 * Render one bar per label. Scores arrive straight off the wire and are
 * echoed verbatim into a data-raw attribute; the rounded display value is
 * always derived from that same number, never from a second source.
 * Probabilities are independent per label, so widths are raw percentages
 * with no normalization across bars.
 */
export function renderBars(scores: Record<string, number>, top: string | null): string {
  const names = Object.keys(scores).sort();
  if (names.length === 0) {
    return '<p class="empty">no results yet</p>';
  }
  const rows = names.map((name) => {
    const p = scores[name]!;
    const pct = Math.max(0, Math.min(100, p * 100));
    const isTop = name === top;
    return [
      `<div class="bar-row${isTop ? " top" : ""}" data-label="${escapeHtml(name)}" data-raw="${String(p)}">`,
      `<span class="bar-label">${escapeHtml(name)}${isTop ? " &#9733;" : ""}</span>`,
      `<span class="bar-track"><span class="bar-fill" style="width:${pct}%"></span></span>`,
      `<span class="bar-value">${p.toFixed(4)}</span>`,
      `</div>`,
    ].join("");
  });
  return rows.join("\n");
}

/**
 * Render the label editor list. The K badge is computed from the support
 * list length right here, so it can never disagree with what a submit
 * would send.
 */
export function renderLabels(state: SessionState): string {
  if (state.labels.length === 0) {
    return '<p class="empty">add a label to begin</p>';
  }
  const blocks = state.labels.map((entry) => {
    const supports = entry.supports.map((text, i) =>
      [
        `<li class="support" data-index="${i}">`,
        `<span class="support-text">${escapeHtml(text)}</span>`,
        `<button type="button" class="edit-support" data-label="${escapeHtml(entry.name)}" data-index="${i}">edit</button>`,
        `<button type="button" class="remove-support" data-label="${escapeHtml(entry.name)}" data-index="${i}">x</button>`,
        `</li>`,
      ].join(""),
    );
    return [
      `<section class="label-block" data-label="${escapeHtml(entry.name)}">`,
      `<header>`,
      `<strong>${escapeHtml(entry.name)}</strong>`,
      `<span class="k-badge">K=${entry.supports.length}</span>`,
      `<button type="button" class="remove-label" data-label="${escapeHtml(entry.name)}">remove label</button>`,
      `</header>`,
      `<ul class="supports">${supports.join("")}</ul>`,
      `<form class="add-support" data-label="${escapeHtml(entry.name)}">`,
      `<input type="text" placeholder="new support text" />`,
      `<button type="submit">add support</button>`,
      `</form>`,
      `</section>`,
    ].join("");
  });
  return blocks.join("\n");
}

export function renderHistory(history: readonly HistoryEntry[]): string {
  if (history.length === 0) {
    return '<p class="empty">no submissions yet</p>';
  }
  // newest first for reading, but the underlying log stays append-only
  const rows = [...history].reverse().map((h) => {
    const parts = Object.keys(h.scores)
      .sort()
      .map((name) => `${escapeHtml(name)}=${h.scores[name]!.toFixed(4)}`)
      .join(" ");
    return [
      `<li class="history-entry" data-timestamp="${escapeHtml(h.timestamp)}">`,
      `<span class="history-query">${escapeHtml(h.query_text)}</span>`,
      `<span class="history-top">top: ${escapeHtml(h.top)}</span>`,
      `<span class="history-scores">${parts}</span>`,
      `</li>`,
    ].join("");
  });
  return `<ol class="history">${rows.join("")}</ol>`;
}
